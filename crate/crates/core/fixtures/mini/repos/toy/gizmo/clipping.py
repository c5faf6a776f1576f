import math


def clip(g, max_norm):
    n = math.sqrt(sum(x * x for x in g))
    return g if n <= max_norm else [x * max_norm / n for x in g]
