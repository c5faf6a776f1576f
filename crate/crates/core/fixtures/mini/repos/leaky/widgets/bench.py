ANSWERS = [1, 2, 3]
