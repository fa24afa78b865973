"""Independent reference implementations used to cross-check the library."""

L_SW, L_SC = 12.0, 11.09


def brute_select(candidates, l_req, l_sw=L_SW, l_sc=L_SC):
    """Plain scan: best feasible by (accuracy desc, latency asc, knobs asc),
    else fastest by (latency asc, accuracy desc, knobs asc)."""
    def est(c):
        return c[2] + (l_sw + l_sc) / c[0].si

    def knobs(b):
        return (b.si, b.shape, b.nprop, b.tracker.index, b.ds)

    best = None
    for c in candidates:
        if est(c) < l_req:
            key = (-c[1], est(c), knobs(c[0]))
            if best is None or key < best[0]:
                best = (key, c)
    if best is not None:
        return best[1][0]
    for c in candidates:
        key = (est(c), -c[1], knobs(c[0]))
        if best is None or key < best[0]:
            best = (key, c)
    return best[1][0]
