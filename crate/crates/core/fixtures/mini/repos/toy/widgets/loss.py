import math


def contrastive_loss(sims, positive, tau=0.1):
    logits = [s / tau for s in sims]
    top = max(logits)
    log_z = top + math.log(sum(math.exp(l - top) for l in logits))
    return log_z - logits[positive]
