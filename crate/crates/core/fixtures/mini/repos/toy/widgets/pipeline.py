from encoder import encode
from loss import contrastive_loss


def step(anchor, candidates, positive):
    a = encode(anchor)
    sims = [sum(x * y for x, y in zip(a, encode(c))) for c in candidates]
    return contrastive_loss(sims, positive)
