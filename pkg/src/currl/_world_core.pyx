# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled backend for the batched world step.

Mirror of ``_world_core_py.step_batch``: identical operation order and IEEE
double arithmetic (built without -ffast-math), so results are bit-identical
to the numpy backend.
"""

from libc.math cimport sqrt

import numpy as np

BACKEND_NAME = "cython"


cdef inline void _project_pair_one(double[:, :, ::1] pos, Py_ssize_t b,
                                   Py_ssize_t i, Py_ssize_t j,
                                   double min_d, double w_i, double w_j) nogil:
    cdef double dx = pos[b, j, 0] - pos[b, i, 0]
    cdef double dy = pos[b, j, 1] - pos[b, i, 1]
    cdef double dist2 = dx * dx + dy * dy
    cdef double dist, ux, uy, overlap, push_x, push_y
    if dist2 < min_d * min_d:
        dist = sqrt(dist2)
        if dist > 1e-12:
            ux = dx / dist
            uy = dy / dist
        else:
            ux = 1.0
            uy = 0.0
        overlap = min_d - dist
        push_x = overlap * ux
        push_y = overlap * uy
        if w_i != 0.0:
            pos[b, i, 0] -= w_i * push_x
            pos[b, i, 1] -= w_i * push_y
        pos[b, j, 0] += w_j * push_x
        pos[b, j, 1] += w_j * push_y


cdef inline void _project_rect_one(double[:, :, ::1] pos, Py_ssize_t b,
                                   Py_ssize_t e, double rx0, double rx1,
                                   double ry0, double ry1, double radius) nogil:
    cdef double px = pos[b, e, 0]
    cdef double py = pos[b, e, 1]
    cdef double cx = px
    cdef double cy = py
    cdef double dx, dy, d2, d, push
    cdef double pl, pr, pd, pu, best
    cdef int choice
    if cx < rx0:
        cx = rx0
    elif cx > rx1:
        cx = rx1
    if cy < ry0:
        cy = ry0
    elif cy > ry1:
        cy = ry1
    dx = px - cx
    dy = py - cy
    d2 = dx * dx + dy * dy
    if d2 > 0.0:
        if d2 < radius * radius:
            d = sqrt(d2)
            push = (radius - d) / d
            pos[b, e, 0] = px + dx * push
            pos[b, e, 1] = py + dy * push
    else:
        pl = px - rx0
        pr = rx1 - px
        pd = py - ry0
        pu = ry1 - py
        best = pl
        choice = 0
        if pr < best:
            best = pr
            choice = 1
        if pd < best:
            best = pd
            choice = 2
        if pu < best:
            best = pu
            choice = 3
        if choice == 0:
            pos[b, e, 0] = rx0 - radius
        elif choice == 1:
            pos[b, e, 0] = rx1 + radius
        elif choice == 2:
            pos[b, e, 1] = ry0 - radius
        else:
            pos[b, e, 1] = ry1 + radius


def step_batch(double[:, :, ::1] pos, double[:, :, ::1] vel,
               double[:, :, ::1] forces, int n_agents, int n_balls,
               double dt, double damping, double max_speed,
               double agent_radius, double ball_radius,
               double[:, ::1] obstacles,
               double x_min, double x_max, double y_min, double y_max,
               double cover_radius, int cover_by_balls,
               unsigned char[:, ::1] collisions,
               unsigned char[:, ::1] covered):
    """See ``_world_core_py.step_batch`` for the contract."""
    cdef Py_ssize_t B = pos.shape[0]
    cdef Py_ssize_t E = pos.shape[1]
    cdef Py_ssize_t A = n_agents
    cdef Py_ssize_t NB = n_balls
    cdef Py_ssize_t L = E - A - NB
    cdef Py_ssize_t R = obstacles.shape[0]
    cdef Py_ssize_t b, i, j, e, k, r, c, lo, hi
    cdef double vx, vy, s2, scale, dx, dy
    cdef double min_d = 2.0 * agent_radius
    cdef double min_d2 = min_d * min_d
    cdef double ab_dist = agent_radius + ball_radius
    cdef double bb_dist = 2.0 * ball_radius
    cdef double cover2 = cover_radius * cover_radius
    cdef double radius, lim_lo, lim_hi
    cdef unsigned char hit

    with nogil:
        for b in range(B):
            # integrate agent velocities, clamp speed, move
            for i in range(A):
                vx = vel[b, i, 0] * (1.0 - damping) + forces[b, i, 0] * dt
                vy = vel[b, i, 1] * (1.0 - damping) + forces[b, i, 1] * dt
                s2 = vx * vx + vy * vy
                if s2 > max_speed * max_speed:
                    scale = max_speed / sqrt(s2)
                    vx = vx * scale
                    vy = vy * scale
                vel[b, i, 0] = vx
                vel[b, i, 1] = vy
                pos[b, i, 0] = pos[b, i, 0] + vx * dt
                pos[b, i, 1] = pos[b, i, 1] + vy * dt

            # agent-agent collision flags on post-move, pre-projection positions
            for i in range(A):
                collisions[b, i] = 0
            for i in range(A):
                for j in range(i + 1, A):
                    dx = pos[b, j, 0] - pos[b, i, 0]
                    dy = pos[b, j, 1] - pos[b, i, 1]
                    if dx * dx + dy * dy < min_d2:
                        collisions[b, i] = 1
                        collisions[b, j] = 1

            # pairwise position projection, sequential in fixed pair order
            for i in range(A):
                for j in range(i + 1, A):
                    _project_pair_one(pos, b, i, j, min_d, 0.5, 0.5)
            if NB:
                for i in range(A):
                    for j in range(A, A + NB):
                        _project_pair_one(pos, b, i, j, ab_dist, 0.0, 1.0)
                for i in range(A, A + NB):
                    for j in range(i + 1, A + NB):
                        _project_pair_one(pos, b, i, j, bb_dist, 0.5, 0.5)

            # obstacle projection for movable entities
            if R:
                for e in range(A + NB):
                    radius = agent_radius if e < A else ball_radius
                    for r in range(R):
                        _project_rect_one(pos, b, e, obstacles[r, 0],
                                          obstacles[r, 1], obstacles[r, 2],
                                          obstacles[r, 3], radius)

            # world bounds clamp for movable entities
            for e in range(A + NB):
                radius = agent_radius if e < A else ball_radius
                lim_lo = x_min + radius
                lim_hi = x_max - radius
                if pos[b, e, 0] < lim_lo:
                    pos[b, e, 0] = lim_lo
                elif pos[b, e, 0] > lim_hi:
                    pos[b, e, 0] = lim_hi
                lim_lo = y_min + radius
                lim_hi = y_max - radius
                if pos[b, e, 1] < lim_lo:
                    pos[b, e, 1] = lim_lo
                elif pos[b, e, 1] > lim_hi:
                    pos[b, e, 1] = lim_hi

            # landmark coverage
            if cover_by_balls:
                lo = A
                hi = A + NB
            else:
                lo = 0
                hi = A
            for k in range(L):
                hit = 0
                for c in range(lo, hi):
                    dx = pos[b, c, 0] - pos[b, A + NB + k, 0]
                    dy = pos[b, c, 1] - pos[b, A + NB + k, 1]
                    if dx * dx + dy * dy < cover2:
                        hit = 1
                        break
                covered[b, k] = hit
