"""Pure-numpy backend for the batched world step.

Reference semantics for the compiled extension in ``_world_core.pyx``: both
backends perform the same IEEE-754 double operations in the same order, so
their outputs are bit-identical.  Keep every arithmetic expression in sync
with the .pyx file when editing.
"""

import numpy as np

BACKEND_NAME = "python"


def step_batch(pos, vel, forces, n_agents, n_balls,
               dt, damping, max_speed,
               agent_radius, ball_radius,
               obstacles,
               x_min, x_max, y_min, y_max,
               cover_radius, cover_by_balls,
               collisions, covered):
    """Advance every environment in the batch by one step, in place.

    pos: (B, E, 2) entity positions laid out agents, balls, landmarks.
    vel: (B, A, 2) agent velocities.  forces: (B, A, 2) applied forces.
    collisions: (B, A) uint8 output, 1 where the agent overlapped another
    agent this step.  covered: (B, L) uint8 output per landmark.
    """
    A = n_agents
    NB = n_balls
    E = pos.shape[1]
    L = E - A - NB

    # integrate agent velocities, clamp speed, move
    vel *= (1.0 - damping)
    vel += forces * dt
    s2 = vel[:, :, 0] * vel[:, :, 0] + vel[:, :, 1] * vel[:, :, 1]
    fast = s2 > max_speed * max_speed
    if np.any(fast):
        scale = np.where(fast, max_speed / np.sqrt(np.where(fast, s2, 1.0)), 1.0)
        vel *= scale[:, :, None]
    pos[:, :A] += vel * dt

    # agent-agent collision flags on post-move, pre-projection positions
    collisions[:] = 0
    min_d = 2.0 * agent_radius
    min_d2 = min_d * min_d
    for i in range(A):
        for j in range(i + 1, A):
            dx = pos[:, j, 0] - pos[:, i, 0]
            dy = pos[:, j, 1] - pos[:, i, 1]
            hit = dx * dx + dy * dy < min_d2
            collisions[:, i] |= hit
            collisions[:, j] |= hit

    # pairwise position projection, sequential in fixed pair order
    for i in range(A):
        for j in range(i + 1, A):
            _project_pair(pos, i, j, min_d, 0.5, 0.5)
    if NB:
        ab_dist = agent_radius + ball_radius
        for i in range(A):
            for b in range(A, A + NB):
                _project_pair(pos, i, b, ab_dist, 0.0, 1.0)
        bb_dist = 2.0 * ball_radius
        for i in range(A, A + NB):
            for j in range(i + 1, A + NB):
                _project_pair(pos, i, j, bb_dist, 0.5, 0.5)

    # obstacle projection for movable entities
    if obstacles.shape[0]:
        for e in range(A + NB):
            radius = agent_radius if e < A else ball_radius
            for r in range(obstacles.shape[0]):
                _project_rect(pos, e, obstacles[r], radius)

    # world bounds clamp for movable entities
    for e in range(A + NB):
        radius = agent_radius if e < A else ball_radius
        np.clip(pos[:, e, 0], x_min + radius, x_max - radius, out=pos[:, e, 0])
        np.clip(pos[:, e, 1], y_min + radius, y_max - radius, out=pos[:, e, 1])

    # landmark coverage
    cover2 = cover_radius * cover_radius
    lo, hi = (A, A + NB) if cover_by_balls else (0, A)
    for k in range(L):
        lm = A + NB + k
        hit = np.zeros(pos.shape[0], dtype=bool)
        for c in range(lo, hi):
            dx = pos[:, c, 0] - pos[:, lm, 0]
            dy = pos[:, c, 1] - pos[:, lm, 1]
            hit |= dx * dx + dy * dy < cover2
        covered[:, k] = hit


def _project_pair(pos, i, j, min_d, w_i, w_j):
    """Push entities i and j apart to distance min_d, split by weights."""
    dx = pos[:, j, 0] - pos[:, i, 0]
    dy = pos[:, j, 1] - pos[:, i, 1]
    dist2 = dx * dx + dy * dy
    hit = dist2 < min_d * min_d
    if not np.any(hit):
        return
    dist = np.sqrt(dist2)
    safe = dist > 1e-12
    denom = np.where(safe, dist, 1.0)
    ux = np.where(safe, dx / denom, 1.0)
    uy = np.where(safe, dy / denom, 0.0)
    overlap = min_d - dist
    push_x = np.where(hit, overlap * ux, 0.0)
    push_y = np.where(hit, overlap * uy, 0.0)
    if w_i:
        pos[:, i, 0] -= w_i * push_x
        pos[:, i, 1] -= w_i * push_y
    pos[:, j, 0] += w_j * push_x
    pos[:, j, 1] += w_j * push_y


def _project_rect(pos, e, rect, radius):
    """Push entity e out of an axis-aligned rectangle."""
    rx0, rx1, ry0, ry1 = rect[0], rect[1], rect[2], rect[3]
    px = pos[:, e, 0]
    py = pos[:, e, 1]
    cx = np.clip(px, rx0, rx1)
    cy = np.clip(py, ry0, ry1)
    dx = px - cx
    dy = py - cy
    d2 = dx * dx + dy * dy
    outside = d2 > 0.0
    near = outside & (d2 < radius * radius)
    if np.any(near):
        d = np.sqrt(np.where(outside, d2, 1.0))
        push = (radius - d) / d
        pos[:, e, 0] = np.where(near, px + dx * push, px)
        pos[:, e, 1] = np.where(near, py + dy * push, py)
        px = pos[:, e, 0]
        py = pos[:, e, 1]
    inside = ~outside
    if np.any(inside):
        pl = px - rx0
        pr = rx1 - px
        pd = py - ry0
        pu = ry1 - py
        choice = np.argmin(np.stack([pl, pr, pd, pu]), axis=0)
        pos[:, e, 0] = np.where(inside & (choice == 0), rx0 - radius, pos[:, e, 0])
        pos[:, e, 0] = np.where(inside & (choice == 1), rx1 + radius, pos[:, e, 0])
        pos[:, e, 1] = np.where(inside & (choice == 2), ry0 - radius, pos[:, e, 1])
        pos[:, e, 1] = np.where(inside & (choice == 3), ry1 + radius, pos[:, e, 1])
