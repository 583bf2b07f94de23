"""Hot loops of the Gibbs sweeps, compiled with numba.

All kernels operate on dense slot-indexed arrays owned by the chain drivers
in gibbs.py. Slots hold clusters; slot_state is 0 = free, 1 = live (in the
partition), 2 = auxiliary empty. Category indices are 0-based here.

Randomness comes in as pre-drawn uniforms (one per decision site), so draws
are deterministic given the caller's generator and independent of numba
internals. Set CROWDCLUST_NO_JIT=1 to run the same code uncompiled.
"""

import math
import os

import numpy as np

if os.environ.get("CROWDCLUST_NO_JIT"):
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
else:
    from numba import njit

FREE, LIVE, AUX = 0, 1, 2


@njit(cache=True)
def _pick_from_logw(w, u):
    """Categorical draw from unnormalized log weights using one uniform."""
    top = -np.inf
    for k in range(w.shape[0]):
        if w[k] > top:
            top = w[k]
    total = 0.0
    for k in range(w.shape[0]):
        total += math.exp(w[k] - top)
    r = u * total
    acc = 0.0
    pick = -1
    for k in range(w.shape[0]):
        p = math.exp(w[k] - top)
        if p > 0.0:
            pick = k
            acc += p
            if r < acc:
                return k
    return pick


@njit(cache=True)
def cbcc_user_logweights(l, slot_state, slot_size, n_slot_tc, n_slot_t,
                         n_ltc, n_lt, beta, beta_eta, log_alpha, out_w):
    """Cluster-assignment log weights for a *detached* user l.

    out_w[s] for each live slot, out_w[S] for a new cluster; dead slots -inf.
    """
    S = slot_state.shape[0]
    C = beta.shape[0]
    # new-cluster term: prior predictive of the user's own counts
    w_new = log_alpha
    for t in range(C):
        nlt = n_lt[l, t]
        if nlt == 0:
            continue
        w_new += math.lgamma(beta[t]) - math.lgamma(nlt + beta[t])
        for c in range(C):
            nltc = n_ltc[l, t, c]
            if nltc != 0:
                w_new += math.lgamma(beta_eta[t, c] + nltc) - math.lgamma(beta_eta[t, c])
    for s in range(S):
        if slot_state[s] != LIVE:
            out_w[s] = -np.inf
            continue
        w = math.log(slot_size[s])
        for t in range(C):
            nlt = n_lt[l, t]
            if nlt == 0:
                continue
            base_t = n_slot_t[s, t] + beta[t]
            w += math.lgamma(base_t) - math.lgamma(base_t + nlt)
            for c in range(C):
                nltc = n_ltc[l, t, c]
                if nltc != 0:
                    base = n_slot_tc[s, t, c] + beta_eta[t, c]
                    w += math.lgamma(base + nltc) - math.lgamma(base)
        out_w[s] = w
    out_w[S] = w_new


@njit(cache=True)
def cbcc_user_sweep(q, slot_state, slot_size, slot_handle, free_stack, meta,
                    n_slot_tc, n_slot_t, n_ltc, n_lt,
                    beta, beta_eta, alpha, u_choice):
    """One full pass of cluster-assignment updates (collapsed conditionals).

    meta: [n_live, free_top, next_handle].
    """
    L = q.shape[0]
    S = slot_state.shape[0]
    C = beta.shape[0]
    log_alpha = math.log(alpha)
    w = np.empty(S + 1)
    for l in range(L):
        s0 = q[l]
        slot_size[s0] -= 1
        for t in range(C):
            if n_lt[l, t] != 0:
                n_slot_t[s0, t] -= n_lt[l, t]
                for c in range(C):
                    n_slot_tc[s0, t, c] -= n_ltc[l, t, c]
        if slot_size[s0] == 0:
            slot_state[s0] = FREE
            meta[0] -= 1
            free_stack[meta[1]] = s0
            meta[1] += 1
        cbcc_user_logweights(l, slot_state, slot_size, n_slot_tc, n_slot_t,
                             n_ltc, n_lt, beta, beta_eta, log_alpha, w)
        pick = _pick_from_logw(w, u_choice[l])
        if pick == S:
            meta[1] -= 1
            s1 = free_stack[meta[1]]
            slot_state[s1] = LIVE
            meta[0] += 1
            slot_handle[s1] = meta[2]
            meta[2] += 1
        else:
            s1 = pick
        q[l] = s1
        slot_size[s1] += 1
        for t in range(C):
            if n_lt[l, t] != 0:
                n_slot_t[s1, t] += n_lt[l, t]
                for c in range(C):
                    n_slot_tc[s1, t, c] += n_ltc[l, t, c]


@njit(cache=True)
def cbcc_z_logweights(i, q, n_slot_tc, n_slot_t, n_t,
                      inst_ptr, inst_user, inst_lab0, beta, beta_eta, eps_mu, out_w):
    """Truth log weights for instance i with its annotations already removed.

    Walks the instance's annotations with temporary count increments, which
    telescopes to the exact gamma-ratio conditional even when several users
    of one cluster labeled the instance.
    """
    C = out_w.shape[0]
    lo, hi = inst_ptr[i], inst_ptr[i + 1]
    for t in range(C):
        w = math.log(n_t[t] + eps_mu[t])
        for k in range(lo, hi):
            s = q[inst_user[k]]
            c = inst_lab0[k]
            w += math.log(n_slot_tc[s, t, c] + beta_eta[t, c])
            w -= math.log(n_slot_t[s, t] + beta[t])
            n_slot_tc[s, t, c] += 1
            n_slot_t[s, t] += 1
        for k in range(lo, hi):
            s = q[inst_user[k]]
            n_slot_tc[s, t, inst_lab0[k]] -= 1
            n_slot_t[s, t] -= 1
        out_w[t] = w


@njit(cache=True)
def cbcc_z_sweep(z0, q, n_slot_tc, n_slot_t, n_ltc, n_lt, n_t,
                 inst_ptr, inst_user, inst_lab0, beta, beta_eta, eps_mu, u_z):
    """One full pass of truth updates for the shared-confusion (clustered) model."""
    N = z0.shape[0]
    C = n_t.shape[0]
    w = np.empty(C)
    for i in range(N):
        lo, hi = inst_ptr[i], inst_ptr[i + 1]
        t0 = z0[i]
        n_t[t0] -= 1
        for k in range(lo, hi):
            l = inst_user[k]
            c = inst_lab0[k]
            s = q[l]
            n_ltc[l, t0, c] -= 1
            n_lt[l, t0] -= 1
            n_slot_tc[s, t0, c] -= 1
            n_slot_t[s, t0] -= 1
        cbcc_z_logweights(i, q, n_slot_tc, n_slot_t, n_t,
                          inst_ptr, inst_user, inst_lab0, beta, beta_eta, eps_mu, w)
        t1 = _pick_from_logw(w, u_z[i])
        z0[i] = t1
        n_t[t1] += 1
        for k in range(lo, hi):
            l = inst_user[k]
            c = inst_lab0[k]
            s = q[l]
            n_ltc[l, t1, c] += 1
            n_lt[l, t1] += 1
            n_slot_tc[s, t1, c] += 1
            n_slot_t[s, t1] += 1


@njit(cache=True)
def hcbcc_user_logweights(l, slot_state, slot_size, n_ltc, n_lt,
                          slot_beta, slot_eta, log_alpha_over_h, out_w):
    """Cluster-assignment log weights for a detached user under sampled cluster params.

    Live slots weigh size x likelihood; auxiliary slots weigh (alpha/h) x likelihood.
    """
    S = slot_state.shape[0]
    C = n_lt.shape[1]
    for s in range(S):
        st = slot_state[s]
        if st == FREE:
            out_w[s] = -np.inf
            continue
        w = math.log(slot_size[s]) if st == LIVE else log_alpha_over_h
        for t in range(C):
            nlt = n_lt[l, t]
            if nlt == 0:
                continue
            bt = slot_beta[s, t]
            w += math.lgamma(bt) - math.lgamma(nlt + bt)
            for c in range(C):
                nltc = n_ltc[l, t, c]
                if nltc != 0:
                    be = bt * slot_eta[s, t, c]
                    w += math.lgamma(be + nltc) - math.lgamma(be)
        out_w[s] = w


@njit(cache=True)
def hcbcc_user_sweep(q, slot_state, slot_size, slot_handle, free_stack, meta,
                     n_ltc, n_lt, slot_beta, slot_eta, aux_slots,
                     alpha, u_choice, u_displace, fresh_beta, fresh_eta):
    """One full pass of cluster-assignment updates via the auxiliary-empty-cluster scheme.

    A cluster emptied by its last member leaving is recycled into the pool,
    displacing one member uniformly at random; a chosen auxiliary is promoted
    and replaced by a spare carrying pre-drawn prior parameters.
    meta: [n_live, free_top, next_handle, fresh_used].
    """
    L = q.shape[0]
    S = slot_state.shape[0]
    C = n_lt.shape[1]
    h = aux_slots.shape[0]
    log_aoh = math.log(alpha / h)
    w = np.empty(S)
    for l in range(L):
        s0 = q[l]
        slot_size[s0] -= 1
        if slot_size[s0] == 0:
            meta[0] -= 1
            j = int(u_displace[l] * h)
            if j >= h:
                j = h - 1
            dead = aux_slots[j]
            slot_state[dead] = FREE
            free_stack[meta[1]] = dead
            meta[1] += 1
            aux_slots[j] = s0
            slot_state[s0] = AUX
        hcbcc_user_logweights(l, slot_state, slot_size, n_ltc, n_lt,
                              slot_beta, slot_eta, log_aoh, w)
        s1 = _pick_from_logw(w, u_choice[l])
        if slot_state[s1] == AUX:
            # promote; the promoted cluster keeps its handle and parameters
            slot_state[s1] = LIVE
            meta[0] += 1
            meta[1] -= 1
            spare = free_stack[meta[1]]
            slot_state[spare] = AUX
            slot_size[spare] = 0
            kf = meta[3]
            meta[3] += 1
            for t in range(C):
                slot_beta[spare, t] = fresh_beta[kf, t]
                for c in range(C):
                    slot_eta[spare, t, c] = fresh_eta[kf, t, c]
            slot_handle[spare] = meta[2]
            meta[2] += 1
            for j in range(h):
                if aux_slots[j] == s1:
                    aux_slots[j] = spare
                    break
        q[l] = s1
        slot_size[s1] += 1


@njit(cache=True)
def factorized_z_logweights(i, n_ltc, n_lt, n_t, inst_ptr, inst_user, inst_lab0,
                            user_beta, user_beta_eta, eps_mu, out_w):
    """Truth log weights for instance i (annotations removed) when the likelihood
    factorizes per user: independent model, or hierarchical model given the
    owning cluster's parameters gathered per user."""
    C = out_w.shape[0]
    lo, hi = inst_ptr[i], inst_ptr[i + 1]
    for t in range(C):
        w = math.log(n_t[t] + eps_mu[t])
        for k in range(lo, hi):
            l = inst_user[k]
            c = inst_lab0[k]
            w += math.log(n_ltc[l, t, c] + user_beta_eta[l, t, c])
            w -= math.log(n_lt[l, t] + user_beta[l, t])
        out_w[t] = w


@njit(cache=True)
def factorized_z_sweep(z0, n_ltc, n_lt, n_t, inst_ptr, inst_user, inst_lab0,
                       user_beta, user_beta_eta, eps_mu, u_z):
    """One full pass of truth updates with a per-user factorized likelihood."""
    N = z0.shape[0]
    C = n_t.shape[0]
    w = np.empty(C)
    for i in range(N):
        lo, hi = inst_ptr[i], inst_ptr[i + 1]
        t0 = z0[i]
        n_t[t0] -= 1
        for k in range(lo, hi):
            l = inst_user[k]
            c = inst_lab0[k]
            n_ltc[l, t0, c] -= 1
            n_lt[l, t0] -= 1
        factorized_z_logweights(i, n_ltc, n_lt, n_t, inst_ptr, inst_user, inst_lab0,
                                user_beta, user_beta_eta, eps_mu, w)
        t1 = _pick_from_logw(w, u_z[i])
        z0[i] = t1
        n_t[t1] += 1
        for k in range(lo, hi):
            l = inst_user[k]
            c = inst_lab0[k]
            n_ltc[l, t1, c] += 1
            n_lt[l, t1] += 1
