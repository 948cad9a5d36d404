def random_upper(rng, shape, scale=2.0, min_im=1e-3):
    """Points of the upper half plane with a spread of magnitudes."""
    re = rng.normal(scale=scale, size=shape)
    im = min_im + rng.exponential(scale=scale, size=shape)
    return re + 1j * im
