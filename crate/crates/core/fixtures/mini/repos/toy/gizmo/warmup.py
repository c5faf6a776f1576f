def warmup_lr(step, base, warmup):
    return base * min(1.0, (step + 1) / warmup)
