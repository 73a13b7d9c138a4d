"""Independent brute-force implementations used as test oracles.

Everything here recomputes quantities from first principles, in plain linear
arithmetic with literal nested loops: simple paths by exhaustive DFS, k-step
transitions as explicit sums over all intermediate class sequences, and
posteriors as normalized products of exhaustively computed conditionals.
No matrix powers, no log space, no caching, no imports from the engine's
computation path.
"""

import itertools


def all_simple_paths_to_edge(edges, source, target_edge, max_len):
    """All simple paths from ``source`` ending with ``target_edge``.

    ``edges`` is an iterable of (u, v) pairs; returns vertex tuples sorted
    lexicographically.
    """
    adj = {}
    for u, v in edges:
        adj.setdefault(u, []).append(v)
    for children in adj.values():
        children.sort()
    u_t, v_t = target_edge
    results = []

    def walk(node, visited, path):
        if node == u_t:
            # the only legal continuation is closing the path with (u_t, v_t)
            if v_t not in visited and len(path) <= max_len:
                results.append(tuple(path) + (v_t,))
            return
        for child in adj.get(node, []):
            if child in visited or child == v_t:
                continue
            if len(path) >= max_len:  # descending + the closing edge would exceed the bound
                continue
            visited.add(child)
            path.append(child)
            walk(child, visited, path)
            path.pop()
            visited.discard(child)

    walk(source, {source}, [source])
    return sorted(results)


def kstep_brute(alpha, k, frm, to):
    """Sum over all class sequences of length k-1 between ``frm`` and ``to``."""
    num = len(alpha)
    total = 0.0
    for mids in itertools.product(range(num), repeat=k - 1):
        seq = (frm,) + mids + (to,)
        prob = 1.0
        for a, b in zip(seq[:-1], seq[1:]):
            prob *= alpha[a][b]
        total += prob
    return total


def marginal_brute(eta, alpha, position, cls):
    """Class marginal at path depth ``position``, anchored at the source."""
    if position == 1:
        return eta[cls]
    return sum(eta[z] * kstep_brute(alpha, position - 1, z, cls) for z in range(len(eta)))


def conditional_prob_brute(eta, alpha, edges, source, prefix, obs, max_len, anchor=True):
    """One hypothesis' conditional probability of ``obs`` given ``prefix``.

    ``prefix`` and ``obs`` carry ``.edge`` and ``.cls``; ``eta``/``alpha`` are
    plain nested lists for one hypothesis.
    """
    if obs.edge[0] == source:
        return eta[obs.cls]
    paths = all_simple_paths_to_edge(edges, source, obs.edge, max_len)
    if not paths:
        raise ValueError(f"no path to {obs.edge!r}")
    weights = []
    arrivals = []
    for path in paths:
        path_edges = list(zip(path[:-1], path[1:]))
        pos = {e: i + 1 for i, e in enumerate(path_edges)}
        on_path = sorted((pos[o.edge], o.cls) for o in prefix if o.edge in pos)
        weight = 1.0
        if on_path and anchor:
            weight *= marginal_brute(eta, alpha, on_path[0][0], on_path[0][1])
        for (p1, c1), (p2, c2) in zip(on_path[:-1], on_path[1:]):
            weight *= kstep_brute(alpha, p2 - p1, c1, c2) if p2 > p1 else (1.0 if c1 == c2 else 0.0)
        if on_path:
            last_pos, last_cls = on_path[-1]
            gap = len(path_edges) - last_pos
            arrival = kstep_brute(alpha, gap, last_cls, obs.cls) if gap else (
                1.0 if last_cls == obs.cls else 0.0
            )
        else:
            arrival = marginal_brute(eta, alpha, len(path_edges), obs.cls)
        weights.append(weight)
        arrivals.append(arrival)
    denom = sum(weights)
    if denom == 0.0:
        return sum(arrivals) / len(arrivals)
    return sum(w * a for w, a in zip(weights, arrivals)) / denom


def posterior_brute(model, edges, source, observations, max_len, prior=None, anchor=True):
    """Bayes posterior of the fake hypothesis from exhaustively computed
    likelihoods: posterior = prior * L1 / (prior * L1 + (1 - prior) * L0)."""
    if prior is None:
        prior = model.prior_fake
    eta = [[float(x) for x in row] for row in model.initial_probs]
    alpha = [[[float(x) for x in row] for row in mat] for mat in model.transition_probs]
    likelihood = [1.0, 1.0]
    prefix = []
    for obs in observations:
        for hyp in (0, 1):
            likelihood[hyp] *= conditional_prob_brute(
                eta[hyp], alpha[hyp], edges, source, prefix, obs, max_len, anchor=anchor
            )
        prefix.append(obs)
    num = prior * likelihood[1]
    return num / (num + (1.0 - prior) * likelihood[0])
