import math


def encode(widget):
    norm = math.sqrt(sum(x * x for x in widget))
    return [x / norm for x in widget]
