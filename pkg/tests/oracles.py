"""Independent reference implementations (plain Python loops, no shared code paths)."""

import math


def matmul_loops(a, b):
    n, m, p = len(a), len(b), len(b[0])
    return [[sum(a[i][k] * b[k][j] for k in range(m)) for j in range(p)] for i in range(n)]


def cosine(x, y):
    dot = sum(p * q for p, q in zip(x, y))
    return dot / (math.sqrt(sum(p * p for p in x)) * math.sqrt(sum(q * q for q in y)))


def merge_oracle(dst, dst_sizes, src, src_sizes, k):
    """Exhaustive bipartite merge: returns (vectors, sizes, groups)."""
    edges = []
    for j, y in enumerate(src):
        best_i, best_s = None, -math.inf
        for i, x in enumerate(dst):
            s = cosine(y, x)
            if s > best_s:
                best_i, best_s = i, s
        edges.append((best_s, j, best_i))
    edges.sort(key=lambda e: (-e[0], e[1]))
    vecs = [list(x) for x in dst]
    sizes = list(dst_sizes)
    groups = [[i] for i in range(len(dst))]
    merged = set()
    for _, j, i in edges[:k]:
        sd, ss = sizes[i], src_sizes[j]
        vecs[i] = [(sd * a + ss * b) / (sd + ss) for a, b in zip(vecs[i], src[j])]
        sizes[i] = sd + ss
        groups[i].append(len(dst) + j)
        merged.add(j)
    for j in range(len(src)):
        if j not in merged:
            vecs.append(list(src[j]))
            sizes.append(src_sizes[j])
            groups.append([len(dst) + j])
    return vecs, sizes, groups


def drop_oracle(scores, n_drop):
    """Indices kept after dropping the n_drop lowest scores (higher index first on ties)."""
    order = sorted(range(len(scores)), key=lambda i: (scores[i], -i))
    dropped = set(order[:n_drop])
    return [i for i in range(len(scores)) if i not in dropped]


def topk_oracle(row, k):
    order = sorted(range(len(row)), key=lambda i: (-row[i], i))
    return sorted(order[:k])


def det_gauss(m):
    """Determinant by Gaussian elimination with partial pivoting, in pure Python."""
    a = [list(map(float, r)) for r in m]
    n = len(a)
    det = 1.0
    for c in range(n):
        p = max(range(c, n), key=lambda r: abs(a[r][c]))
        if a[p][c] == 0.0:
            return 0.0
        if p != c:
            a[c], a[p] = a[p], a[c]
            det = -det
        det *= a[c][c]
        for r in range(c + 1, n):
            f = a[r][c] / a[c][c]
            for cc in range(c, n):
                a[r][cc] -= f * a[c][cc]
    return det


def logdet_gauss(m):
    a = [list(map(float, r)) for r in m]
    n = len(a)
    total = 0.0
    for c in range(n):
        p = max(range(c, n), key=lambda r: abs(a[r][c]))
        a[c], a[p] = a[p], a[c]
        total += math.log(abs(a[c][c]))
        for r in range(c + 1, n):
            f = a[r][c] / a[c][c]
            for cc in range(c, n):
                a[r][cc] -= f * a[c][cc]
    return total


def coding_rate_oracle(a, eps):
    n, d = len(a), len(a[0])
    scale = d / (n * eps * eps)
    m = [[(1.0 if i == j else 0.0) + scale * sum(a[r][i] * a[r][j] for r in range(n)) for j in range(d)] for i in range(d)]
    return 0.5 * logdet_gauss(m)


def singular_values_jacobi(a, sweeps=60, tol=1e-15):
    """One-sided Jacobi SVD; returns singular values in descending order."""
    u = [list(map(float, r)) for r in a]
    if len(u) < len(u[0]):
        u = [list(r) for r in zip(*u)]
    m, n = len(u), len(u[0])
    cols = [[u[i][j] for i in range(m)] for j in range(n)]
    for _ in range(sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = sum(x * x for x in cols[p])
                beta = sum(x * x for x in cols[q])
                gamma = sum(x * y for x, y in zip(cols[p], cols[q]))
                if abs(gamma) <= tol * math.sqrt(alpha * beta) or gamma == 0.0:
                    continue
                off = max(off, abs(gamma) / math.sqrt(alpha * beta))
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                cp, cq = cols[p], cols[q]
                cols[p] = [c * x - s * y for x, y in zip(cp, cq)]
                cols[q] = [s * x + c * y for x, y in zip(cp, cq)]
        if off < tol:
            break
    return sorted((math.sqrt(sum(x * x for x in col)) for col in cols), reverse=True)


def stable_rank_oracle(a):
    sv = singular_values_jacobi(a)
    return sum(s * s for s in sv) / (sv[0] * sv[0])


def softmax_row(row):
    e = [math.exp(v) for v in row]
    total = sum(e)
    return [v / total for v in e]
