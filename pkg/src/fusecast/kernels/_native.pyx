# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the per-frame hot kernels.

Floating-point semantics are kept in lock-step with
``fusecast.kernels.numpy_impl``: all arithmetic runs in float64, per-cell
and per-neighbor accumulation follows the same order, and results are
rounded to float32 once. The backend parity tests assert bitwise
equality, so any change here must be mirrored there.
"""

import numpy as np

cimport numpy as cnp
cimport openmp
from cython.parallel cimport prange
from libc.math cimport floor, sqrt
from libc.stdlib cimport calloc, free, malloc

cnp.import_array()

# mirrors numpy_impl.MAX_CELL_COORD (2**40)
cdef double MAX_CELL_COORD = 1099511627776.0
cdef cnp.uint64_t HASH_MULT = <cnp.uint64_t> 0x517CC1B727220A95


def backproject(depth, color, mask, keep,
                double fx, double fy, double cx, double cy, double depth_scale):
    """Lift kept pixels with valid depth into camera-frame 3D points."""
    cdef cnp.uint16_t[:, ::1] d = depth
    cdef cnp.uint8_t[:, :, ::1] c = color
    cdef cnp.uint8_t[:, ::1] m = mask
    cdef cnp.uint8_t[::1] keep_lut = keep
    cdef Py_ssize_t h = d.shape[0]
    cdef Py_ssize_t w = d.shape[1]
    cdef Py_ssize_t i, j, n = 0, o = 0
    cdef double z

    for i in range(h):
        for j in range(w):
            if d[i, j] > 0 and keep_lut[m[i, j]]:
                n += 1

    positions = np.empty((n, 3), dtype=np.float32)
    colors = np.empty((n, 3), dtype=np.uint8)
    cdef cnp.float32_t[:, ::1] pv = positions
    cdef cnp.uint8_t[:, ::1] cv = colors

    for i in range(h):
        for j in range(w):
            if d[i, j] > 0 and keep_lut[m[i, j]]:
                z = <double> d[i, j] * depth_scale
                pv[o, 0] = <float> ((<double> j - cx) * z / fx)
                pv[o, 1] = <float> ((<double> i - cy) * z / fy)
                pv[o, 2] = <float> z
                cv[o, 0] = c[i, j, 0]
                cv[o, 1] = c[i, j, 1]
                cv[o, 2] = c[i, j, 2]
                o += 1
    return positions, colors


def voxel_bin(positions, colors, double leaf):
    """Bin points into cubic cells of edge `leaf` and average each cell."""
    cdef cnp.float32_t[:, ::1] p = positions
    cdef cnp.uint8_t[:, ::1] col = colors
    cdef Py_ssize_t n = p.shape[0]
    if n == 0:
        return (
            np.empty((0, 3), dtype=np.float32),
            np.empty((0, 3), dtype=np.uint8),
            np.empty(0, dtype=np.int64),
        )

    cells_arr = np.empty((n, 3), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] cells = cells_arr
    cdef Py_ssize_t i, a
    cdef double q
    cdef cnp.int64_t v
    cdef cnp.int64_t mins[3]
    cdef cnp.int64_t maxs[3]
    cdef cnp.int64_t coord_cap = <cnp.int64_t> MAX_CELL_COORD
    for a in range(3):
        mins[a] = coord_cap + 1
        maxs[a] = -coord_cap - 1
    for i in range(n):
        for a in range(3):
            q = floor(<double> p[i, a] / leaf)
            if q > MAX_CELL_COORD or q < -MAX_CELL_COORD:
                raise ValueError(f"voxel leaf {leaf} is too small for the cloud extent")
            v = <cnp.int64_t> q
            cells[i, a] = v
            if v < mins[a]:
                mins[a] = v
            if v > maxs[a]:
                maxs[a] = v

    cdef cnp.int64_t ny = maxs[1] - mins[1] + 1
    cdef cnp.int64_t nz = maxs[2] - mins[2] + 1
    if (int(maxs[0] - mins[0]) + 1) * int(ny) * int(nz) >= 2**62:
        raise ValueError(f"voxel grid for leaf {leaf} exceeds the addressable key space")

    # open-addressing hash of packed cell key -> output slot, slots in
    # first-occurrence order
    cdef Py_ssize_t cap = 1
    while cap < 2 * n:
        cap <<= 1
    cdef cnp.int64_t* hkeys = <cnp.int64_t*> malloc(cap * sizeof(cnp.int64_t))
    cdef cnp.int64_t* hslots = <cnp.int64_t*> malloc(cap * sizeof(cnp.int64_t))
    if hkeys == NULL or hslots == NULL:
        free(hkeys)
        free(hslots)
        raise MemoryError()
    for i in range(cap):
        hkeys[i] = -1

    inverse_arr = np.empty(n, dtype=np.int64)
    sums_arr = np.zeros((n, 3), dtype=np.float64)
    csums_arr = np.zeros((n, 3), dtype=np.int64)
    counts_arr = np.zeros(n, dtype=np.int64)
    cdef cnp.int64_t[::1] inverse = inverse_arr
    cdef cnp.float64_t[:, ::1] sums = sums_arr
    cdef cnp.int64_t[:, ::1] csums = csums_arr
    cdef cnp.int64_t[::1] counts = counts_arr

    cdef cnp.int64_t key, slot
    cdef Py_ssize_t m = 0
    cdef size_t probe
    cdef cnp.uint64_t hval
    cdef cnp.uint64_t hmask = <cnp.uint64_t> (cap - 1)
    for i in range(n):
        key = (cells[i, 0] - mins[0]) * ny
        key = (key + (cells[i, 1] - mins[1])) * nz
        key = key + (cells[i, 2] - mins[2])
        hval = (<cnp.uint64_t> key) * HASH_MULT
        probe = <size_t> ((hval >> 32) & hmask)
        while True:
            if hkeys[probe] == -1:
                hkeys[probe] = key
                hslots[probe] = m
                slot = m
                m += 1
                break
            if hkeys[probe] == key:
                slot = hslots[probe]
                break
            probe = (probe + 1) & hmask
        inverse[i] = slot
        counts[slot] += 1
        for a in range(3):
            sums[slot, a] += <double> p[i, a]
            csums[slot, a] += <cnp.int64_t> col[i, a]
    free(hkeys)
    free(hslots)

    centroids = np.empty((m, 3), dtype=np.float32)
    mean_colors = np.empty((m, 3), dtype=np.uint8)
    cdef cnp.float32_t[:, ::1] cenv = centroids
    cdef cnp.uint8_t[:, ::1] mcv = mean_colors
    for i in range(m):
        for a in range(3):
            cenv[i, a] = <float> (sums[i, a] / <double> counts[i])
            mcv[i, a] = <cnp.uint8_t> ((2 * csums[i, a] + counts[i]) // (2 * counts[i]))
    return centroids, mean_colors, inverse_arr


cdef struct Grid:
    double ox, oy, oz      # origin (min corner)
    double h               # cell edge
    Py_ssize_t nx, ny, nz  # cell counts
    cnp.int64_t* cell_start  # ncells + 1 prefix offsets
    cnp.int64_t* ids         # point ids grouped by cell
    # positions copied in cell order so per-cell scans stay contiguous
    float* px
    float* py
    float* pz


cdef int _grid_build(Grid* g, cnp.float32_t[:, ::1] p) except -1:
    """Bucket points into a uniform grid sized for O(1) neighborhoods.

    Cells are deliberately fine (about 3x cbrt(n) per axis, capped at 8M
    cells total) so that surface-like clouds, which concentrate points
    in a thin slab of cells, still give small candidate sets per ring.
    """
    cdef Py_ssize_t n = p.shape[0]
    cdef double mn[3]
    cdef double mx[3]
    cdef Py_ssize_t i, a
    cdef double val
    for a in range(3):
        mn[a] = p[0, a]
        mx[a] = p[0, a]
    for i in range(1, n):
        for a in range(3):
            val = p[i, a]
            if val < mn[a]:
                mn[a] = val
            if val > mx[a]:
                mx[a] = val
    cdef double ext = mx[0] - mn[0]
    if mx[1] - mn[1] > ext:
        ext = mx[1] - mn[1]
    if mx[2] - mn[2] > ext:
        ext = mx[2] - mn[2]
    cdef double target = floor(3.0 * pow_third(<double> n)) + 1.0
    cdef double h = ext / target
    if h <= 0.0 or h != h:
        h = 1.0
    cdef double ncells_est
    while True:
        ncells_est = (floor((mx[0] - mn[0]) / h) + 1.0) * (floor((mx[1] - mn[1]) / h) + 1.0) \
            * (floor((mx[2] - mn[2]) / h) + 1.0)
        if ncells_est <= 8_000_000.0:
            break
        h *= 1.3
    g.ox = mn[0]
    g.oy = mn[1]
    g.oz = mn[2]
    g.h = h
    g.nx = <Py_ssize_t> floor((mx[0] - mn[0]) / h) + 1
    g.ny = <Py_ssize_t> floor((mx[1] - mn[1]) / h) + 1
    g.nz = <Py_ssize_t> floor((mx[2] - mn[2]) / h) + 1

    cdef Py_ssize_t ncells = g.nx * g.ny * g.nz
    g.cell_start = <cnp.int64_t*> calloc(ncells + 1, sizeof(cnp.int64_t))
    g.ids = <cnp.int64_t*> malloc(n * sizeof(cnp.int64_t))
    g.px = <float*> malloc(n * sizeof(float))
    g.py = <float*> malloc(n * sizeof(float))
    g.pz = <float*> malloc(n * sizeof(float))
    cdef cnp.int64_t* cell_of = <cnp.int64_t*> malloc(n * sizeof(cnp.int64_t))
    if (g.cell_start == NULL or g.ids == NULL or g.px == NULL or g.py == NULL
            or g.pz == NULL or cell_of == NULL):
        _grid_free(g)
        free(cell_of)
        raise MemoryError()

    cdef Py_ssize_t cx_, cy_, cz_, cell, slot
    for i in range(n):
        cx_ = <Py_ssize_t> floor((<double> p[i, 0] - g.ox) / h)
        cy_ = <Py_ssize_t> floor((<double> p[i, 1] - g.oy) / h)
        cz_ = <Py_ssize_t> floor((<double> p[i, 2] - g.oz) / h)
        if cx_ >= g.nx:
            cx_ = g.nx - 1
        if cy_ >= g.ny:
            cy_ = g.ny - 1
        if cz_ >= g.nz:
            cz_ = g.nz - 1
        cell = (cx_ * g.ny + cy_) * g.nz + cz_
        cell_of[i] = cell
        g.cell_start[cell + 1] += 1
    for i in range(ncells):
        g.cell_start[i + 1] += g.cell_start[i]
    cdef cnp.int64_t* fill = <cnp.int64_t*> malloc(ncells * sizeof(cnp.int64_t))
    if fill == NULL:
        free(cell_of)
        raise MemoryError()
    for i in range(ncells):
        fill[i] = g.cell_start[i]
    for i in range(n):
        slot = fill[cell_of[i]]
        g.ids[slot] = i
        g.px[slot] = p[i, 0]
        g.py[slot] = p[i, 1]
        g.pz[slot] = p[i, 2]
        fill[cell_of[i]] += 1
    free(fill)
    free(cell_of)
    return 0


cdef void _grid_free(Grid* g) noexcept:
    free(g.cell_start)
    free(g.ids)
    free(g.px)
    free(g.py)
    free(g.pz)


cdef inline double pow_third(double x) noexcept:
    return x ** (1.0 / 3.0)


cdef inline void _insert_candidate(double* cd, cnp.int64_t* ci, Py_ssize_t* cnt,
                                   Py_ssize_t k, double dist_sq, cnp.int64_t pid) noexcept nogil:
    """Keep the k best (squared distance, id) pairs, sorted ascending."""
    cdef Py_ssize_t pos
    if cnt[0] == k:
        if dist_sq > cd[k - 1] or (dist_sq == cd[k - 1] and pid >= ci[k - 1]):
            return
        pos = k - 1
    else:
        pos = cnt[0]
        cnt[0] += 1
    while pos > 0 and (cd[pos - 1] > dist_sq or (cd[pos - 1] == dist_sq and ci[pos - 1] > pid)):
        cd[pos] = cd[pos - 1]
        ci[pos] = ci[pos - 1]
        pos -= 1
    cd[pos] = dist_sq
    ci[pos] = pid


cdef void _grid_query(Grid* g,
                      double qx, double qy, double qz, Py_ssize_t k,
                      cnp.int64_t exclude,
                      double* cd, cnp.int64_t* ci, Py_ssize_t* cnt) noexcept nogil:
    """Exact k nearest points to (qx,qy,qz), ties broken by lower id.

    Candidates are compared by squared distance (same ordering and the
    same ties); callers take sqrt on the k winners only.
    """
    cdef double h = g.h
    cdef double ox = g.ox, oy = g.oy, oz = g.oz
    cdef Py_ssize_t nx = g.nx, ny = g.ny, nz = g.nz
    cdef cnp.int64_t* cell_start = g.cell_start
    cdef cnp.int64_t* ids = g.ids
    cdef float* px = g.px
    cdef float* py = g.py
    cdef float* pz = g.pz
    cdef Py_ssize_t qcx = <Py_ssize_t> floor((qx - ox) / h)
    cdef Py_ssize_t qcy = <Py_ssize_t> floor((qy - oy) / h)
    cdef Py_ssize_t qcz = <Py_ssize_t> floor((qz - oz) / h)
    cdef Py_ssize_t rcover_x = max2(qcx, nx - 1 - qcx)
    cdef Py_ssize_t rcover_y = max2(qcy, ny - 1 - qcy)
    cdef Py_ssize_t rcover_z = max2(qcz, nz - 1 - qcz)
    cdef Py_ssize_t rcover = max2(rcover_x, max2(rcover_y, rcover_z))

    cnt[0] = 0
    cdef Py_ssize_t ring = 0
    cdef Py_ssize_t x, y, z, x0, x1, y0, y1, z0, z1, cell, s, pid
    cdef double dx, dy, dz, dist_sq, ring_reach, lo, cell_min_sq
    cdef bint on_shell_x, on_shell_xy
    while True:
        x0 = qcx - ring
        x1 = qcx + ring
        if x0 < 0:
            x0 = 0
        if x1 > nx - 1:
            x1 = nx - 1
        for x in range(x0, x1 + 1):
            on_shell_x = (x == qcx - ring) or (x == qcx + ring)
            y0 = qcy - ring
            y1 = qcy + ring
            if y0 < 0:
                y0 = 0
            if y1 > ny - 1:
                y1 = ny - 1
            for y in range(y0, y1 + 1):
                on_shell_xy = on_shell_x or (y == qcy - ring) or (y == qcy + ring)
                z0 = qcz - ring
                z1 = qcz + ring
                if z0 < 0:
                    z0 = 0
                if z1 > nz - 1:
                    z1 = nz - 1
                for z in range(z0, z1 + 1):
                    if not (on_shell_xy or z == qcz - ring or z == qcz + ring):
                        continue
                    cell = (x * ny + y) * nz + z
                    if cell_start[cell] == cell_start[cell + 1]:
                        continue
                    if cnt[0] == k and ring > 0:
                        # skip cells whose closest corner cannot beat the
                        # current worst candidate (strict: a tie could
                        # still win on the lower id)
                        cell_min_sq = 0.0
                        lo = ox + (<double> x) * h
                        if qx < lo:
                            cell_min_sq = cell_min_sq + (lo - qx) * (lo - qx)
                        elif qx > lo + h:
                            cell_min_sq = cell_min_sq + (qx - lo - h) * (qx - lo - h)
                        lo = oy + (<double> y) * h
                        if qy < lo:
                            cell_min_sq = cell_min_sq + (lo - qy) * (lo - qy)
                        elif qy > lo + h:
                            cell_min_sq = cell_min_sq + (qy - lo - h) * (qy - lo - h)
                        lo = oz + (<double> z) * h
                        if qz < lo:
                            cell_min_sq = cell_min_sq + (lo - qz) * (lo - qz)
                        elif qz > lo + h:
                            cell_min_sq = cell_min_sq + (qz - lo - h) * (qz - lo - h)
                        if cell_min_sq > cd[k - 1]:
                            continue
                    for s in range(cell_start[cell], cell_start[cell + 1]):
                        pid = ids[s]
                        if pid == exclude:
                            continue
                        dx = <double> px[s] - qx
                        dy = <double> py[s] - qy
                        dz = <double> pz[s] - qz
                        dist_sq = dx * dx + dy * dy + dz * dz
                        _insert_candidate(cd, ci, cnt, k, dist_sq, pid)
        if ring >= rcover:
            break
        # any unscanned point sits in a ring > `ring`, hence farther than
        # ring * h; strict < keeps distance ties eligible for id tie-break
        ring_reach = (<double> ring) * h
        if cnt[0] == k and cd[k - 1] < ring_reach * ring_reach:
            break
        ring += 1


cdef inline Py_ssize_t max2(Py_ssize_t a, Py_ssize_t b) noexcept nogil:
    return a if a > b else b


def mean_knn_distance(positions, Py_ssize_t k):
    """Mean Euclidean distance from each point to its k nearest others.

    Queries run in parallel over a read-only grid; each output row is
    computed independently, so results do not depend on thread count.
    """
    cdef cnp.float32_t[:, ::1] p = positions
    cdef Py_ssize_t n = p.shape[0]
    if n <= k:
        raise ValueError(f"need more than k={k} points, got {n}")

    cdef Grid g
    _grid_build(&g, p)
    out = np.empty(n, dtype=np.float64)
    cdef cnp.float64_t[::1] ov = out
    cdef Py_ssize_t nthreads = openmp.omp_get_max_threads()
    # pad per-thread scratch to cache-line multiples: the candidate
    # arrays and counters are written per candidate, so sharing a line
    # across threads serializes the whole loop
    cdef Py_ssize_t stride = k + 8
    cdef double* cd = <double*> malloc(nthreads * stride * sizeof(double))
    cdef cnp.int64_t* ci = <cnp.int64_t*> malloc(nthreads * stride * sizeof(cnp.int64_t))
    cdef Py_ssize_t* cnts = <Py_ssize_t*> malloc(nthreads * 8 * sizeof(Py_ssize_t))
    if cd == NULL or ci == NULL or cnts == NULL:
        _grid_free(&g)
        free(cd)
        free(ci)
        free(cnts)
        raise MemoryError()
    cdef Py_ssize_t i, j, tid
    cdef double acc
    with nogil:
        for i in prange(n, schedule="static"):
            tid = openmp.omp_get_thread_num()
            _grid_query(&g, <double> p[i, 0], <double> p[i, 1], <double> p[i, 2],
                        k, i, cd + tid * stride, ci + tid * stride, cnts + tid * 8)
            acc = sqrt(cd[tid * stride])
            for j in range(1, k):
                acc = acc + sqrt(cd[tid * stride + j])
            ov[i] = acc / <double> k
    free(cd)
    free(ci)
    free(cnts)
    _grid_free(&g)
    return out


def knn(positions, queries, Py_ssize_t k, exclude=None):
    """Exact k nearest neighbor ids per query, (distance, id) ordered."""
    cdef cnp.float32_t[:, ::1] p = positions
    cdef cnp.float32_t[:, ::1] q = queries
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t nq = q.shape[0]
    cdef Py_ssize_t need = k + (1 if exclude is not None else 0)
    if k < 1:
        raise ValueError("k must be >= 1")
    if need > n:
        raise ValueError(f"k={k} too large for {n} indexed points")

    cdef cnp.int64_t[::1] excl
    if exclude is not None:
        excl = np.ascontiguousarray(exclude, dtype=np.int64)
    else:
        excl = np.full(nq, -1, dtype=np.int64)

    cdef Grid g
    _grid_build(&g, p)
    out = np.empty((nq, k), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] ov = out
    cdef Py_ssize_t nthreads = openmp.omp_get_max_threads()
    cdef Py_ssize_t stride = k + 8
    cdef double* cd = <double*> malloc(nthreads * stride * sizeof(double))
    cdef cnp.int64_t* ci = <cnp.int64_t*> malloc(nthreads * stride * sizeof(cnp.int64_t))
    cdef Py_ssize_t* cnts = <Py_ssize_t*> malloc(nthreads * 8 * sizeof(Py_ssize_t))
    if cd == NULL or ci == NULL or cnts == NULL:
        _grid_free(&g)
        free(cd)
        free(ci)
        free(cnts)
        raise MemoryError()
    cdef Py_ssize_t r, j, tid
    with nogil:
        for r in prange(nq, schedule="static"):
            tid = openmp.omp_get_thread_num()
            _grid_query(&g, <double> q[r, 0], <double> q[r, 1], <double> q[r, 2],
                        k, excl[r], cd + tid * stride, ci + tid * stride, cnts + tid * 8)
            for j in range(k):
                ov[r, j] = ci[tid * stride + j]
    free(cd)
    free(ci)
    free(cnts)
    _grid_free(&g)
    return out
