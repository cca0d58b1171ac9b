from collections import deque
import math


def window_stats(window):
    mean = sum(window) / len(window)
    var = sum((v - mean) ** 2 for v in window) / len(window)
    return mean, math.sqrt(var)


def detect(series, w=5, tau=3.0):
    window = deque(maxlen=w)
    flagged = []
    for index, x in enumerate(series):
        if len(window) == w:
            mean, std = window_stats(window)
            z = 0.0 if std == 0 else (x - mean) / std
            if abs(z) > tau:
                flagged.append(index)
        window.append(x)
    return flagged
