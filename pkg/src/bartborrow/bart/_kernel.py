"""Compiled backfitting MCMC for one sum-of-trees surface.

Trees live in heap layout (children of node k are 2k+1 and 2k+2) inside
per-tree arrays of capacity ``2**(max_depth+1) - 1``. Covariates arrive
pre-binned: for an ordered variable ``xidx[i, q]`` is the number of grid
cutpoints strictly below ``x[i, q]``, so ``x <= cut[c]`` iff ``c >= xidx``;
for an unordered variable it is the level code and a rule is a bitmask of
the levels sent left.

Random numbers come from a counter-based SplitMix64 stream. Every
(iteration, tree) pair gets its own substream keyed off the master key.
"""

import math

import numpy as np
from numba import njit

LEAF = -1
ABSENT = -2

ORDERED = 0
UNORDERED = 1

GROW, PRUNE, CHANGE, SWAP = 0, 1, 2, 3

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)


# --------------------------------------------------------------------------
# random numbers


@njit(cache=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def set_substream(st, master, a, b):
    st[0] = mix64(master ^ mix64(np.uint64(a) * _GOLDEN + np.uint64(b) + _ONE))
    st[1] = np.uint64(0)


@njit(cache=True)
def next_u64(st):
    st[1] += _ONE
    return mix64(st[0] + st[1] * _GOLDEN)


@njit(cache=True)
def uniform(st):
    return (float(next_u64(st) >> _S11) + 0.5) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def randint(st, n):
    k = int(uniform(st) * n)
    return k if k < n else n - 1


@njit(cache=True)
def normal(st):
    u1 = uniform(st)
    u2 = uniform(st)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@njit(cache=True)
def gamma(st, shape):
    if shape < 1.0:
        return gamma(st, shape + 1.0) * uniform(st) ** (1.0 / shape)
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = normal(st)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = uniform(st)
        if math.log(u) < 0.5 * x * x + d - d * v + d * math.log(v):
            return d * v


@njit(cache=True)
def chisq(st, df):
    return 2.0 * gamma(st, 0.5 * df)


# --------------------------------------------------------------------------
# tree helpers


@njit(cache=True)
def popcount(x):
    n = 0
    while x:
        x &= x - 1
        n += 1
    return n


@njit(cache=True)
def node_depth(k):
    d = 0
    while k > 0:
        k = (k - 1) // 2
        d += 1
    return d


@njit(cache=True)
def is_descendant(node, k):
    while node > k:
        node = (node - 1) // 2
    return node == k


@njit(cache=True)
def node_avail(var_j, cut_j, k, kind, ncat, lo, hi, mask, path):
    """Fill lo/hi/mask with what is still splittable at node k; return depth."""
    p = kind.shape[0]
    for q in range(p):
        if kind[q] == ORDERED:
            lo[q] = 0
            hi[q] = ncat[q] - 1
        else:
            mask[q] = (np.int64(1) << ncat[q]) - 1
    depth = 0
    t = k
    while t > 0:
        path[depth] = t
        t = (t - 1) // 2
        depth += 1
    for i in range(depth - 1, -1, -1):
        child = path[i]
        a = (child - 1) // 2
        q = var_j[a]
        c = cut_j[a]
        if kind[q] == ORDERED:
            if child == 2 * a + 1:
                if c - 1 < hi[q]:
                    hi[q] = c - 1
            elif c + 1 > lo[q]:
                lo[q] = c + 1
        elif child == 2 * a + 1:
            mask[q] &= c
        else:
            mask[q] &= ~c
    return depth


@njit(cache=True)
def n_rules(q, kind, lo, hi, mask):
    if kind[q] == ORDERED:
        r = hi[q] - lo[q] + 1
        return r if r > 0 else 0
    k = popcount(mask[q])
    if k < 2:
        return 0
    return (np.int64(1) << (k - 1)) - 1


@njit(cache=True)
def usable_vars(kind, lo, hi, mask, out):
    n = 0
    for q in range(kind.shape[0]):
        if n_rules(q, kind, lo, hi, mask) > 0:
            out[n] = q
            n += 1
    return n


@njit(cache=True)
def rule_valid(q, c, kind, lo, hi, mask):
    if kind[q] == ORDERED:
        return lo[q] <= c <= hi[q]
    live = mask[q]
    if popcount(live) < 2:
        return False
    low = live & -live
    return (c & ~live) == 0 and (c & low) != 0 and c != live


@njit(cache=True)
def draw_rule(st, q, kind, lo, hi, mask):
    if kind[q] == ORDERED:
        return lo[q] + randint(st, hi[q] - lo[q] + 1)
    live = mask[q]
    low = live & -live
    rest = live & ~low
    while True:
        pick = np.int64(0)
        bits = rest
        while bits:
            b = bits & -bits
            if uniform(st) < 0.5:
                pick |= b
            bits &= ~b
        if pick != rest:
            return low | pick


@njit(cache=True)
def restrict(q, c, left, kind, lo, hi, mask):
    if kind[q] == ORDERED:
        if left:
            hi[q] = min(hi[q], c - 1)
        else:
            lo[q] = max(lo[q], c + 1)
    elif left:
        mask[q] &= c
    else:
        mask[q] &= ~c


@njit(cache=True)
def goes_left(xv, q, c, kind):
    if kind[q] == ORDERED:
        return c >= xv
    return ((c >> xv) & 1) == 1


@njit(cache=True)
def split_prob(rho, kappa, depth):
    return rho * (1.0 + depth) ** (-kappa)


@njit(cache=True)
def tree_log_prior(var_j, cut_j, kind, ncat, rho, kappa, max_depth, lo, hi, mask, path, qbuf, stack):
    total = 0.0
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        k = stack[top]
        d = node_avail(var_j, cut_j, k, kind, ncat, lo, hi, mask, path)
        nus = usable_vars(kind, lo, hi, mask, qbuf)
        p = split_prob(rho, kappa, d) if (nus > 0 and d < max_depth) else 0.0
        if var_j[k] == LEAF:
            total += math.log1p(-p)
            continue
        if p == 0.0:
            return -np.inf
        q = var_j[k]
        if not rule_valid(q, cut_j[k], kind, lo, hi, mask):
            return -np.inf
        total += math.log(p) - math.log(nus) - math.log(n_rules(q, kind, lo, hi, mask))
        stack[top] = 2 * k + 2
        stack[top + 1] = 2 * k + 1
        top += 2
    return total


@njit(cache=True)
def scan_tree(var_j, leaves, nogs, internals, stack):
    """Pre-order walk collecting leaves, internal nodes (root first), and
    internal nodes whose children are both leaves."""
    nl = 0
    ng = 0
    ni = 0
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        k = stack[top]
        if var_j[k] == LEAF:
            leaves[nl] = k
            nl += 1
        else:
            internals[ni] = k
            ni += 1
            if var_j[2 * k + 1] == LEAF and var_j[2 * k + 2] == LEAF:
                nogs[ng] = k
                ng += 1
            stack[top] = 2 * k + 2
            stack[top + 1] = 2 * k + 1
            top += 2
    return nl, ng, ni


@njit(cache=True)
def move_probs(base, can_grow, can_prune, can_change, can_swap, out):
    out[GROW] = base[GROW] if can_grow else 0.0
    out[PRUNE] = base[PRUNE] if can_prune else 0.0
    out[CHANGE] = base[CHANGE] if can_change else 0.0
    out[SWAP] = base[SWAP] if can_swap else 0.0
    s = out[0] + out[1] + out[2] + out[3]
    if s > 0.0:
        for i in range(4):
            out[i] /= s
    return s > 0.0


@njit(cache=True)
def leaf_lm(s, n, s2, t2):
    if n == 0:
        return 0.0
    denom = s2 + n * t2
    return 0.5 * math.log(s2 / denom) + t2 * s * s / (2.0 * s2 * denom)


# --------------------------------------------------------------------------
# flat storage of retained forests


@njit(cache=True)
def _grow_storage(f_var, f_cut, f_val, f_left, need):
    cap = f_var.shape[0]
    while cap < need:
        cap *= 2
    if cap == f_var.shape[0]:
        return f_var, f_cut, f_val, f_left
    nv = np.empty(cap, np.int32)
    nc = np.empty(cap, np.int64)
    nval = np.empty(cap, np.float64)
    nleft = np.empty(cap, np.int64)
    n = f_var.shape[0]
    nv[:n] = f_var
    nc[:n] = f_cut
    nval[:n] = f_val
    nleft[:n] = f_left
    return nv, nc, nval, nleft


@njit(cache=True)
def _store_tree(var_j, cut_j, mu_j, f_var, f_cut, f_val, f_left, pos, queue):
    """Write one tree breadth-first with sibling nodes adjacent; return next free slot."""
    queue[0] = 0
    head = 0
    tail = 1
    nxt = pos + 1
    flat = pos
    while head < tail:
        k = queue[head]
        head += 1
        f_var[flat] = var_j[k]
        if var_j[k] == LEAF:
            f_cut[flat] = 0
            f_val[flat] = mu_j[k]
            f_left[flat] = -1
        else:
            f_cut[flat] = cut_j[k]
            f_val[flat] = 0.0
            f_left[flat] = nxt
            nxt += 2
            queue[tail] = 2 * k + 1
            queue[tail + 1] = 2 * k + 2
            tail += 2
        flat += 1
    return nxt


@njit(cache=True)
def predict_flat(roots, f_var, f_cut, f_val, f_left, xidx, kind):
    """Sum of leaf values over trees for every retained draw and point: (L, n)."""
    L, m = roots.shape
    n = xidx.shape[0]
    out = np.zeros((L, n))
    for ell in range(L):
        for i in range(n):
            acc = 0.0
            for j in range(m):
                f = roots[ell, j]
                while f_var[f] != LEAF:
                    q = f_var[f]
                    if goes_left(xidx[i, q], q, f_cut[f], kind):
                        f = f_left[f]
                    else:
                        f = f_left[f] + 1
                acc += f_val[f]
            out[ell, i] = acc
    return out


# --------------------------------------------------------------------------
# the chain


@njit(cache=True)
def run_chain(
    y,
    xidx,
    kind,
    ncat,
    m,
    rho,
    kappa,
    max_depth,
    sigma_mu,
    nu,
    lam,
    sigma_init,
    base_probs,
    structure_moves,
    update_sigma,
    n_iter,
    n_burn,
    key,
    keep_trees,
):
    n = y.shape[0]
    p = kind.shape[0]
    cap = (1 << (max_depth + 1)) - 1
    L = n_iter - n_burn

    var = np.full((m, cap), ABSENT, np.int32)
    cut = np.zeros((m, cap), np.int64)
    mu = np.zeros((m, cap))
    node_of = np.zeros((m, n), np.int32)
    ybar = 0.0
    for i in range(n):
        ybar += y[i]
    ybar /= n
    for j in range(m):
        var[j, 0] = LEAF
        mu[j, 0] = ybar / m
    fit = np.full(n, ybar)

    lo = np.zeros(p, np.int64)
    hi = np.zeros(p, np.int64)
    mask = np.zeros(p, np.int64)
    lo2 = np.zeros(p, np.int64)
    hi2 = np.zeros(p, np.int64)
    mask2 = np.zeros(p, np.int64)
    qbuf = np.zeros(p, np.int64)
    path = np.zeros(max_depth + 2, np.int64)
    stack = np.zeros(cap + 2, np.int64)
    leaves = np.zeros(cap, np.int64)
    nogs = np.zeros(cap, np.int64)
    internals = np.zeros(cap, np.int64)
    goods = np.zeros(cap, np.int64)
    cnt_old = np.zeros(cap, np.int64)
    sum_old = np.zeros(cap)
    cnt_new = np.zeros(cap, np.int64)
    sum_new = np.zeros(cap)
    resid = np.zeros(n)
    newnode = np.zeros(n, np.int32)
    probs = np.zeros(4)
    probs2 = np.zeros(4)
    st = np.zeros(2, np.uint64)

    sigma = sigma_init
    sigma_draws = np.zeros(L)
    fit_sum = np.zeros(n)
    proposed = np.zeros(4, np.int64)
    accepted = np.zeros(4, np.int64)

    if keep_trees:
        store_cap = max(L * m * 3, 16)
    else:
        store_cap = 16
    f_var = np.empty(store_cap, np.int32)
    f_cut = np.empty(store_cap, np.int64)
    f_val = np.empty(store_cap)
    f_left = np.empty(store_cap, np.int64)
    roots = np.zeros((L if keep_trees else 0, m), np.int64)
    pos = 0

    t2 = sigma_mu * sigma_mu
    for it in range(n_iter):
        s2 = sigma * sigma
        for j in range(m):
            set_substream(st, key, it, j)
            var_j = var[j]
            cut_j = cut[j]
            mu_j = mu[j]
            nodes_j = node_of[j]
            for i in range(n):
                resid[i] = y[i] - fit[i] + mu_j[nodes_j[i]]

            if structure_moves:
                nl, ng, ni = scan_tree(var_j, leaves, nogs, internals, stack)
                n_good = 0
                for a in range(nl):
                    k = leaves[a]
                    d = node_avail(var_j, cut_j, k, kind, ncat, lo, hi, mask, path)
                    if d < max_depth and usable_vars(kind, lo, hi, mask, qbuf) > 0:
                        goods[n_good] = k
                        n_good += 1
                if move_probs(base_probs, n_good > 0, ng > 0, ni > 0, ni > 1, probs):
                    u = uniform(st)
                    move = 0
                    acc_p = probs[0]
                    while u > acc_p and move < 3:
                        move += 1
                        acc_p += probs[move]
                    while probs[move] == 0.0:
                        move -= 1
                    proposed[move] += 1

                    if move == GROW:
                        g = goods[randint(st, n_good)]
                        d = node_avail(var_j, cut_j, g, kind, ncat, lo, hi, mask, path)
                        nus = usable_vars(kind, lo, hi, mask, qbuf)
                        q = qbuf[randint(st, nus)]
                        c = draw_rule(st, q, kind, lo, hi, mask)
                        nlft = 0
                        slft = 0.0
                        nrgt = 0
                        srgt = 0.0
                        for i in range(n):
                            if nodes_j[i] == g:
                                if goes_left(xidx[i, q], q, c, kind):
                                    nlft += 1
                                    slft += resid[i]
                                else:
                                    nrgt += 1
                                    srgt += resid[i]
                        if nlft > 0 and nrgt > 0:
                            pd = split_prob(rho, kappa, d)
                            pl = 0.0
                            pr = 0.0
                            if d + 1 < max_depth:
                                for side in range(2):
                                    lo2[:] = lo
                                    hi2[:] = hi
                                    mask2[:] = mask
                                    restrict(q, c, side == 0, kind, lo2, hi2, mask2)
                                    if usable_vars(kind, lo2, hi2, mask2, qbuf) > 0:
                                        if side == 0:
                                            pl = split_prob(rho, kappa, d + 1)
                                        else:
                                            pr = split_prob(rho, kappa, d + 1)
                            n_good_new = n_good - 1 + (1 if pl > 0 else 0) + (1 if pr > 0 else 0)
                            parent_nog = g > 0 and var_j[g - 1 if g % 2 == 0 else g + 1] == LEAF
                            n_nog_new = ng + 1 - (1 if parent_nog else 0)
                            move_probs(base_probs, n_good_new > 0, True, True, ni + 1 > 1, probs2)
                            log_ratio = (
                                leaf_lm(slft, nlft, s2, t2)
                                + leaf_lm(srgt, nrgt, s2, t2)
                                - leaf_lm(slft + srgt, nlft + nrgt, s2, t2)
                                + math.log(pd)
                                + math.log1p(-pl)
                                + math.log1p(-pr)
                                - math.log1p(-pd)
                                + math.log(probs2[PRUNE])
                                - math.log(n_nog_new)
                                - math.log(probs[GROW])
                                + math.log(n_good)
                            )
                            if math.log(uniform(st)) < log_ratio:
                                accepted[GROW] += 1
                                var_j[g] = q
                                cut_j[g] = c
                                var_j[2 * g + 1] = LEAF
                                var_j[2 * g + 2] = LEAF
                                for i in range(n):
                                    if nodes_j[i] == g:
                                        if goes_left(xidx[i, q], q, c, kind):
                                            nodes_j[i] = 2 * g + 1
                                        else:
                                            nodes_j[i] = 2 * g + 2

                    elif move == PRUNE:
                        k = nogs[randint(st, ng)]
                        d = node_avail(var_j, cut_j, k, kind, ncat, lo, hi, mask, path)
                        nus = usable_vars(kind, lo, hi, mask, qbuf)
                        q = var_j[k]
                        c = cut_j[k]
                        kl = 2 * k + 1
                        kr = 2 * k + 2
                        nlft = 0
                        slft = 0.0
                        nrgt = 0
                        srgt = 0.0
                        for i in range(n):
                            if nodes_j[i] == kl:
                                nlft += 1
                                slft += resid[i]
                            elif nodes_j[i] == kr:
                                nrgt += 1
                                srgt += resid[i]
                        pd = split_prob(rho, kappa, d)
                        pl = 0.0
                        pr = 0.0
                        if d + 1 < max_depth:
                            for side in range(2):
                                lo2[:] = lo
                                hi2[:] = hi
                                mask2[:] = mask
                                restrict(q, c, side == 0, kind, lo2, hi2, mask2)
                                if usable_vars(kind, lo2, hi2, mask2, qbuf) > 0:
                                    if side == 0:
                                        pl = split_prob(rho, kappa, d + 1)
                                    else:
                                        pr = split_prob(rho, kappa, d + 1)
                        n_good_new = n_good + 1 - (1 if pl > 0 else 0) - (1 if pr > 0 else 0)
                        sib_leaf = k > 0 and var_j[k - 1 if k % 2 == 0 else k + 1] == LEAF
                        n_nog_new = ng - 1 + (1 if sib_leaf else 0)
                        move_probs(base_probs, True, n_nog_new > 0, ni - 1 > 0, ni - 1 > 1, probs2)
                        log_ratio = (
                            leaf_lm(slft + srgt, nlft + nrgt, s2, t2)
                            - leaf_lm(slft, nlft, s2, t2)
                            - leaf_lm(srgt, nrgt, s2, t2)
                            - math.log(pd)
                            - math.log1p(-pl)
                            - math.log1p(-pr)
                            + math.log1p(-pd)
                            + math.log(probs2[GROW])
                            - math.log(n_good_new)
                            - math.log(probs[PRUNE])
                            + math.log(ng)
                        )
                        if math.log(uniform(st)) < log_ratio:
                            accepted[PRUNE] += 1
                            var_j[k] = LEAF
                            var_j[kl] = ABSENT
                            var_j[kr] = ABSENT
                            for i in range(n):
                                if nodes_j[i] == kl or nodes_j[i] == kr:
                                    nodes_j[i] = k

                    else:
                        q_new = 0
                        c_new = np.int64(0)
                        # CHANGE and SWAP alter rules but not shape: re-route the
                        # affected subtree and compare over its (fixed) leaves.
                        if move == CHANGE:
                            top = internals[randint(st, ni)]
                            node_avail(var_j, cut_j, top, kind, ncat, lo, hi, mask, path)
                            nus = usable_vars(kind, lo, hi, mask, qbuf)
                            q_new = qbuf[randint(st, nus)]
                            c_new = draw_rule(st, q_new, kind, lo, hi, mask)
                            n_sw = 1
                            a1 = top
                            a2 = top
                            a3 = top
                        else:
                            child = internals[1 + randint(st, ni - 1)]
                            top = (child - 1) // 2
                            sib = child + 1 if child % 2 == 1 else child - 1
                            a1 = top
                            a2 = child
                            a3 = sib
                            if var_j[sib] >= 0 and var_j[sib] == var_j[child] and cut_j[sib] == cut_j[child]:
                                n_sw = 3
                            else:
                                n_sw = 2
                        old_prior = tree_log_prior(
                            var_j, cut_j, kind, ncat, rho, kappa, max_depth, lo2, hi2, mask2, path, qbuf, stack
                        )
                        sv1 = var_j[a1]
                        sc1 = cut_j[a1]
                        sv2 = var_j[a2]
                        sc2 = cut_j[a2]
                        sv3 = var_j[a3]
                        sc3 = cut_j[a3]
                        if move == CHANGE:
                            var_j[top] = q_new
                            cut_j[top] = c_new
                        else:
                            var_j[a1] = sv2
                            cut_j[a1] = sc2
                            var_j[a2] = sv1
                            cut_j[a2] = sc1
                            if n_sw == 3:
                                var_j[a3] = sv1
                                cut_j[a3] = sc1
                        new_prior = tree_log_prior(
                            var_j, cut_j, kind, ncat, rho, kappa, max_depth, lo2, hi2, mask2, path, qbuf, stack
                        )
                        ok = new_prior > -np.inf
                        if ok:
                            for a in range(nl):
                                lf = leaves[a]
                                cnt_old[lf] = 0
                                sum_old[lf] = 0.0
                                cnt_new[lf] = 0
                                sum_new[lf] = 0.0
                            for i in range(n):
                                nd = nodes_j[i]
                                if is_descendant(nd, top):
                                    cnt_old[nd] += 1
                                    sum_old[nd] += resid[i]
                                    f = top
                                    while var_j[f] != LEAF:
                                        qq = var_j[f]
                                        if goes_left(xidx[i, qq], qq, cut_j[f], kind):
                                            f = 2 * f + 1
                                        else:
                                            f = 2 * f + 2
                                    newnode[i] = f
                                    cnt_new[f] += 1
                                    sum_new[f] += resid[i]
                                else:
                                    newnode[i] = nd
                            log_ratio = new_prior - old_prior
                            for a in range(nl):
                                lf = leaves[a]
                                if is_descendant(lf, top):
                                    if cnt_new[lf] == 0:
                                        ok = False
                                        break
                                    log_ratio += leaf_lm(sum_new[lf], cnt_new[lf], s2, t2) - leaf_lm(
                                        sum_old[lf], cnt_old[lf], s2, t2
                                    )
                        if ok and math.log(uniform(st)) < log_ratio:
                            accepted[move] += 1
                            for i in range(n):
                                nodes_j[i] = newnode[i]
                        else:
                            var_j[a1] = sv1
                            cut_j[a1] = sc1
                            var_j[a2] = sv2
                            cut_j[a2] = sc2
                            var_j[a3] = sv3
                            cut_j[a3] = sc3

            # conjugate leaf draws
            nl, ng, ni = scan_tree(var_j, leaves, nogs, internals, stack)
            for a in range(nl):
                lf = leaves[a]
                cnt_old[lf] = 0
                sum_old[lf] = 0.0
            for i in range(n):
                nd = nodes_j[i]
                cnt_old[nd] += 1
                sum_old[nd] += resid[i]
            for a in range(nl):
                lf = leaves[a]
                prec = cnt_old[lf] / s2 + 1.0 / t2
                mu_j[lf] = (sum_old[lf] / s2) / prec + normal(st) / math.sqrt(prec)
            for i in range(n):
                fit[i] = y[i] - resid[i] + mu_j[nodes_j[i]]

        if update_sigma:
            set_substream(st, key, it, m)
            ssr = 0.0
            for i in range(n):
                e = y[i] - fit[i]
                ssr += e * e
            sigma = math.sqrt((nu * lam + ssr) / chisq(st, nu + n))

        if it >= n_burn:
            ell = it - n_burn
            sigma_draws[ell] = sigma
            for i in range(n):
                fit_sum[i] += fit[i]
            if keep_trees:
                for j in range(m):
                    f_var, f_cut, f_val, f_left = _grow_storage(f_var, f_cut, f_val, f_left, pos + cap)
                    roots[ell, j] = pos
                    pos = _store_tree(var[j], cut[j], mu[j], f_var, f_cut, f_val, f_left, pos, stack)

    for i in range(n):
        fit_sum[i] /= L
    return (
        sigma_draws,
        fit_sum,
        proposed,
        accepted,
        roots,
        f_var[:pos].copy(),
        f_cut[:pos].copy(),
        f_val[:pos].copy(),
        f_left[:pos].copy(),
    )
