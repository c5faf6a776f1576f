def momentum_step(w, v, g, lr=0.1, beta=0.9):
    v = [beta * vi + gi for vi, gi in zip(v, g)]
    w = [wi - lr * vi for wi, vi in zip(w, v)]
    return w, v
