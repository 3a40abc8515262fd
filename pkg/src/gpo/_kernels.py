"""Compiled inner loops of the guarded tree search.

Everything here works on flat arrays. A search tree is a set of parallel
arrays indexed by node id; children of ``(node, action)`` form a singly
linked list through ``node_next`` keyed by ``node_obs``.
"""
import math

import numpy as np
from numba import njit

# error codes returned by the kernels
OK = 0
NO_ALLOWED = 1
DESYNC = 2
FULL = 3


@njit(cache=True)
def seed(s):
    np.random.seed(s)


@njit(cache=True)
def next_rem(rem, r, gamma):
    if gamma == 0.0:
        return -np.inf if rem <= r else np.inf
    return (rem - r) / gamma


@njit(cache=True)
def allowed(b, rem, a, sreward, min_succ, gamma):
    return next_rem(rem, sreward[b, a], gamma) <= min_succ[b, a]


@njit(cache=True)
def edge(b, a, o, A, eptr, eobs, esucc):
    k = b * A + a
    for j in range(eptr[k], eptr[k + 1]):
        if eobs[j] == o:
            return esucc[j]
    return -1


@njit(cache=True)
def step(s, a, A, rptr, rstate, rcum):
    k = s * A + a
    lo = rptr[k]
    hi = rptr[k + 1]
    u = np.random.random()
    for j in range(lo, hi - 1):
        if u < rcum[j]:
            return rstate[j]
    return rstate[hi - 1]


@njit(cache=True)
def rollout(s, b, rem, depth, max_depth, A, rptr, rstate, rcum, reward, obs_map,
            sreward, min_succ, eptr, eobs, esucc, absorbing, gamma, log):
    """Uniformly random allowed actions until the cutoff or absorption.

    Writes the chosen actions into ``log`` and returns
    ``(payoff, n_actions, status)``.
    """
    buf = np.empty(A, np.int64)
    total = 0.0
    disc = 1.0
    n = 0
    while depth < max_depth and not absorbing[b]:
        k = 0
        for a in range(A):
            if allowed(b, rem, a, sreward, min_succ, gamma):
                buf[k] = a
                k += 1
        if k == 0:
            return total, n, NO_ALLOWED
        a = buf[np.random.randint(k)]
        if n < log.shape[0]:
            log[n] = a
        n += 1
        s2 = step(s, a, A, rptr, rstate, rcum)
        total += disc * reward[s, a]
        disc *= gamma
        b2 = edge(b, a, obs_map[s2], A, eptr, eobs, esucc)
        if b2 < 0:
            return total, n, DESYNC
        rem = next_rem(rem, sreward[b, a], gamma)
        b = b2
        s = s2
        depth += 1
    return total, n, OK


@njit(cache=True)
def select(node, b, rem, c, A, sreward, min_succ, gamma, node_visits, act_visits, act_value):
    """UCB choice over allowed actions; unvisited first, ties to the lowest index."""
    best = -1
    best_score = -np.inf
    logn = math.log(max(node_visits[node], 1))
    for a in range(A):
        if not allowed(b, rem, a, sreward, min_succ, gamma):
            continue
        n = act_visits[node, a]
        if n == 0:
            return a
        score = act_value[node, a] / n + c * math.sqrt(logn / n)
        if best < 0 or score > best_score:
            best = a
            best_score = score
    return best


@njit(cache=True)
def find_child(node, a, o, child_head, node_next, node_obs):
    ch = child_head[node, a]
    while ch >= 0:
        if node_obs[ch] == o:
            return ch
        ch = node_next[ch]
    return -1


@njit(cache=True)
def new_node(n_nodes, parent, a, o, b, rem, node_support, node_rem, node_obs,
             node_next, child_head):
    i = n_nodes
    node_support[i] = b
    node_rem[i] = rem
    node_obs[i] = o
    node_next[i] = child_head[parent, a]
    child_head[parent, a] = i
    return i


@njit(cache=True)
def search(n_sims, root, particles, n_nodes, max_depth, c, A,
           rptr, rstate, rcum, reward, obs_map,
           sreward, min_succ, eptr, eobs, esucc, absorbing, gamma,
           node_support, node_rem, node_visits, node_obs, node_next,
           act_visits, act_value, child_head):
    """Run ``n_sims`` simulations from ``root``.

    Returns ``(n_nodes, status, last)`` with ``last`` the return of the final
    simulation as seen from the root.
    """
    cap = node_support.shape[0]
    path_node = np.empty(max_depth + 1, np.int64)
    path_act = np.empty(max_depth + 1, np.int64)
    path_rew = np.empty(max_depth + 1, np.float64)
    log = np.empty(0, np.int64)
    g = 0.0
    for _ in range(n_sims):
        s = particles[np.random.randint(particles.shape[0])]
        node = root
        depth = 0
        tail = 0.0
        while depth < max_depth:
            b = node_support[node]
            if absorbing[b]:
                break
            rem = node_rem[node]
            a = select(node, b, rem, c, A, sreward, min_succ, gamma,
                       node_visits, act_visits, act_value)
            if a < 0:
                return n_nodes, NO_ALLOWED, g
            s2 = step(s, a, A, rptr, rstate, rcum)
            o = obs_map[s2]
            path_node[depth] = node
            path_act[depth] = a
            path_rew[depth] = reward[s, a]
            depth += 1
            child = find_child(node, a, o, child_head, node_next, node_obs)
            if child < 0:
                b2 = edge(b, a, o, A, eptr, eobs, esucc)
                if b2 < 0:
                    return n_nodes, DESYNC, g
                if n_nodes >= cap:
                    return n_nodes, FULL, g
                rem2 = next_rem(rem, sreward[b, a], gamma)
                new_node(n_nodes, node, a, o, b2, rem2, node_support, node_rem,
                         node_obs, node_next, child_head)
                n_nodes += 1
                tail, _, st = rollout(s2, b2, rem2, depth, max_depth, A, rptr, rstate, rcum,
                                      reward, obs_map, sreward, min_succ, eptr, eobs, esucc,
                                      absorbing, gamma, log)
                if st != OK:
                    return n_nodes, st, g
                break
            node = child
            s = s2
        g = tail
        for k in range(depth - 1, -1, -1):
            g = path_rew[k] + gamma * g
            nd = path_node[k]
            a = path_act[k]
            node_visits[nd] += 1
            act_visits[nd, a] += 1
            act_value[nd, a] += g
    return n_nodes, OK, g


@njit(cache=True)
def compact(new_root, n_nodes, A, node_support, node_rem, node_visits, node_obs, node_next,
            act_visits, act_value, child_head, cap):
    """Copy the subtree under ``new_root`` into fresh arrays with capacity ``cap``."""
    ns = np.empty(cap, np.int64)
    nr = np.empty(cap, np.float64)
    nv = np.zeros(cap, np.int64)
    no = np.full(cap, -1, np.int64)
    nn = np.full(cap, -1, np.int64)
    av = np.zeros((cap, A), np.int64)
    aq = np.zeros((cap, A), np.float64)
    ch = np.full((cap, A), -1, np.int64)
    order = np.empty(n_nodes, np.int64)
    remap = np.full(n_nodes, -1, np.int64)
    order[0] = new_root
    remap[new_root] = 0
    head = 0
    tail = 1
    while head < tail:
        old = order[head]
        i = remap[old]
        ns[i] = node_support[old]
        nr[i] = node_rem[old]
        nv[i] = node_visits[old]
        no[i] = node_obs[old] if i > 0 else -1
        for a in range(A):
            av[i, a] = act_visits[old, a]
            aq[i, a] = act_value[old, a]
            prev = -1
            c = child_head[old, a]
            while c >= 0:
                remap[c] = tail
                order[tail] = c
                if prev < 0:
                    ch[i, a] = tail
                else:
                    nn[prev] = tail
                prev = tail
                tail += 1
                c = node_next[c]
        head += 1
    return tail, ns, nr, nv, no, nn, av, aq, ch


@njit(cache=True)
def filter_particles(particles, a, o, b, n_out, max_tries, A, rptr, rstate, rcum, obs_map, member):
    """Push particles through ``a`` and keep those emitting ``o`` inside support ``b``.

    ``member[s]`` marks states of the new support. Returns the kept states,
    possibly fewer than ``n_out`` (or none) when matches are rare.
    """
    out = np.empty(n_out, np.int64)
    k = 0
    tries = 0
    n = particles.shape[0]
    while k < n_out and tries < max_tries:
        s = particles[np.random.randint(n)] if tries >= n else particles[tries]
        tries += 1
        s2 = step(s, a, A, rptr, rstate, rcum)
        if obs_map[s2] == o and member[s2]:
            out[k] = s2
            k += 1
    return out[:k]
