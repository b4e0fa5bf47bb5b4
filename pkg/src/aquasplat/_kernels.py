"""Tile-based compositing kernels.

Each tile owns its pixels, and backward writes per-entry accumulators whose
slots are unique per tile, so results are bit-identical at any thread count
(serial and parallel drivers share the same per-tile routine). The backward
pass recomputes alpha with the exact forward expressions, which replays the
same skip / early-termination decisions.

All arrays entering the kernels are float64; callers cast. Small frames run
the serial driver: on machines where OpenBLAS and numba keep separate OpenMP
pools, alternating tiny parallel regions with GEMMs costs ~10 ms per switch.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

TILE_SIZE = 16
ALPHA_SKIP = 1.0 / 255.0
ALPHA_CLAMP = 0.999
T_STOP = 1e-4

# parallel pays off above this many tiles
PARALLEL_MIN_TILES = 64


@njit(fastmath=False, cache=True)
def _forward_tile(t, tile_starts, tile_entries, tiles_x,
                  mean2d, invcov, opacity, color, depth,
                  c_med, s_attn, s_bs, has_medium, t_stop,
                  full, clear, medium, depth_img, t_final, n_proc):
    height, width = full.shape[0], full.shape[1]
    tx = t % tiles_x
    ty = t // tiles_x
    x_lo = tx * TILE_SIZE
    y_lo = ty * TILE_SIZE
    x_hi = min(x_lo + TILE_SIZE, width)
    y_hi = min(y_lo + TILE_SIZE, height)
    start = tile_starts[t]
    end = tile_starts[t + 1]
    for py in range(y_lo, y_hi):
        for px in range(x_lo, x_hi):
            fx = float(px)
            fy = float(py)
            T = 1.0
            obj0 = 0.0
            obj1 = 0.0
            obj2 = 0.0
            cl0 = 0.0
            cl1 = 0.0
            cl2 = 0.0
            md0 = 0.0
            md1 = 0.0
            md2 = 0.0
            dsum = 0.0
            pb0 = 1.0
            pb1 = 1.0
            pb2 = 1.0
            count = 0
            stopped = False
            for e in range(start, end):
                if T < t_stop:
                    stopped = True
                    break
                j = tile_entries[e]
                s = depth[j]
                if has_medium:
                    b0 = math.exp(-s_bs[py, px, 0] * s)
                    b1 = math.exp(-s_bs[py, px, 1] * s)
                    b2 = math.exp(-s_bs[py, px, 2] * s)
                    md0 += T * c_med[py, px, 0] * (pb0 - b0)
                    md1 += T * c_med[py, px, 1] * (pb1 - b1)
                    md2 += T * c_med[py, px, 2] * (pb2 - b2)
                    pb0 = b0
                    pb1 = b1
                    pb2 = b2
                count += 1
                dx = fx - mean2d[j, 0]
                dy = fy - mean2d[j, 1]
                q = invcov[j, 0] * dx * dx + 2.0 * invcov[j, 1] * dx * dy \
                    + invcov[j, 2] * dy * dy
                if q < 0.0:
                    q = 0.0
                alpha = opacity[j] * math.exp(-0.5 * q)
                if alpha < ALPHA_SKIP:
                    continue
                if alpha > ALPHA_CLAMP:
                    alpha = ALPHA_CLAMP
                w = T * alpha
                if has_medium:
                    a0 = math.exp(-s_attn[py, px, 0] * s)
                    a1 = math.exp(-s_attn[py, px, 1] * s)
                    a2 = math.exp(-s_attn[py, px, 2] * s)
                else:
                    a0 = 1.0
                    a1 = 1.0
                    a2 = 1.0
                obj0 += w * color[j, 0] * a0
                obj1 += w * color[j, 1] * a1
                obj2 += w * color[j, 2] * a2
                cl0 += w * color[j, 0]
                cl1 += w * color[j, 1]
                cl2 += w * color[j, 2]
                dsum += w * s
                T *= 1.0 - alpha
            if has_medium and not stopped:
                md0 += T * c_med[py, px, 0] * pb0
                md1 += T * c_med[py, px, 1] * pb1
                md2 += T * c_med[py, px, 2] * pb2
            full[py, px, 0] = obj0 + md0
            full[py, px, 1] = obj1 + md1
            full[py, px, 2] = obj2 + md2
            clear[py, px, 0] = cl0
            clear[py, px, 1] = cl1
            clear[py, px, 2] = cl2
            medium[py, px, 0] = md0
            medium[py, px, 1] = md1
            medium[py, px, 2] = md2
            depth_img[py, px] = dsum
            t_final[py, px] = T
            n_proc[py, px] = count


@njit(fastmath=False, cache=True)
def _forward_serial(tile_starts, tile_entries, tiles_x,
                    mean2d, invcov, opacity, color, depth,
                    c_med, s_attn, s_bs, has_medium, t_stop,
                    full, clear, medium, depth_img, t_final, n_proc):
    for t in range(tile_starts.shape[0] - 1):
        _forward_tile(t, tile_starts, tile_entries, tiles_x,
                      mean2d, invcov, opacity, color, depth,
                      c_med, s_attn, s_bs, has_medium, t_stop,
                      full, clear, medium, depth_img, t_final, n_proc)


@njit(parallel=True, fastmath=False, cache=True)
def _forward_parallel(tile_starts, tile_entries, tiles_x,
                      mean2d, invcov, opacity, color, depth,
                      c_med, s_attn, s_bs, has_medium, t_stop,
                      full, clear, medium, depth_img, t_final, n_proc):
    for t in prange(tile_starts.shape[0] - 1):
        _forward_tile(t, tile_starts, tile_entries, tiles_x,
                      mean2d, invcov, opacity, color, depth,
                      c_med, s_attn, s_bs, has_medium, t_stop,
                      full, clear, medium, depth_img, t_final, n_proc)


def forward(tile_starts, tile_entries, tiles_x,
            mean2d, invcov, opacity, color, depth,
            c_med, s_attn, s_bs, has_medium, t_stop,
            full, clear, medium, depth_img, t_final, n_proc):
    driver = _forward_parallel if tile_starts.shape[0] - 1 >= PARALLEL_MIN_TILES \
        else _forward_serial
    driver(tile_starts, tile_entries, tiles_x, mean2d, invcov, opacity, color,
           depth, c_med, s_attn, s_bs, has_medium, t_stop,
           full, clear, medium, depth_img, t_final, n_proc)


@njit(fastmath=False, cache=True)
def _backward_tile(t, tile_starts, tile_entries, tiles_x,
                   mean2d, invcov, opacity, color, depth,
                   c_med, s_attn, s_bs, has_medium, t_stop,
                   grad_full, t_final, n_proc, half_w, half_h,
                   e_dcolor, e_dmean2d, e_dinvcov, e_dopacity, e_ddepth,
                   e_densnorm, d_cmed, d_sattn, d_sbs):
    height, width = grad_full.shape[0], grad_full.shape[1]
    tx = t % tiles_x
    ty = t // tiles_x
    x_lo = tx * TILE_SIZE
    y_lo = ty * TILE_SIZE
    x_hi = min(x_lo + TILE_SIZE, width)
    y_hi = min(y_lo + TILE_SIZE, height)
    start = tile_starts[t]
    end = tile_starts[t + 1]
    for py in range(y_lo, y_hi):
        for px in range(x_lo, x_hi):
            g0 = grad_full[py, px, 0]
            g1 = grad_full[py, px, 1]
            g2 = grad_full[py, px, 2]
            if g0 == 0.0 and g1 == 0.0 and g2 == 0.0:
                continue
            fx = float(px)
            fy = float(py)
            m = n_proc[py, px]
            stopped = m < (end - start)
            tcur = t_final[py, px]
            if has_medium:
                cm0 = c_med[py, px, 0]
                cm1 = c_med[py, px, 1]
                cm2 = c_med[py, px, 2]
                sb0 = s_bs[py, px, 0]
                sb1 = s_bs[py, px, 1]
                sb2 = s_bs[py, px, 2]
                sa0 = s_attn[py, px, 0]
                sa1 = s_attn[py, px, 1]
                sa2 = s_attn[py, px, 2]
            else:
                cm0 = cm1 = cm2 = 0.0
                sb0 = sb1 = sb2 = 0.0
                sa0 = sa1 = sa2 = 0.0
            # suffix = all terms behind the current entry, seeded with the
            # beyond-the-last-Gaussian medium term
            suf0 = 0.0
            suf1 = 0.0
            suf2 = 0.0
            t_right = 0.0
            if has_medium and not stopped:
                if m > 0:
                    s_last = depth[tile_entries[start + m - 1]]
                else:
                    s_last = 0.0
                bl0 = math.exp(-sb0 * s_last)
                bl1 = math.exp(-sb1 * s_last)
                bl2 = math.exp(-sb2 * s_last)
                suf0 = tcur * cm0 * bl0
                suf1 = tcur * cm1 * bl1
                suf2 = tcur * cm2 * bl2
                d_cmed[py, px, 0] += g0 * tcur * bl0
                d_cmed[py, px, 1] += g1 * tcur * bl1
                d_cmed[py, px, 2] += g2 * tcur * bl2
                t_right = tcur
            for k in range(m - 1, -1, -1):
                e = start + k
                j = tile_entries[e]
                s = depth[j]
                dx = fx - mean2d[j, 0]
                dy = fy - mean2d[j, 1]
                q = invcov[j, 0] * dx * dx + 2.0 * invcov[j, 1] * dx * dy \
                    + invcov[j, 2] * dy * dy
                if q < 0.0:
                    q = 0.0
                gk = math.exp(-0.5 * q)
                araw = opacity[j] * gk
                skipped = araw < ALPHA_SKIP
                if skipped:
                    alpha = 0.0
                elif araw > ALPHA_CLAMP:
                    alpha = ALPHA_CLAMP
                else:
                    alpha = araw
                t_here = tcur / (1.0 - alpha)
                w = t_here * alpha
                if has_medium:
                    a0 = math.exp(-sa0 * s)
                    a1 = math.exp(-sa1 * s)
                    a2 = math.exp(-sa2 * s)
                    b0 = math.exp(-sb0 * s)
                    b1 = math.exp(-sb1 * s)
                    b2 = math.exp(-sb2 * s)
                else:
                    a0 = a1 = a2 = 1.0
                    b0 = b1 = b2 = 0.0
                ob0 = w * color[j, 0] * a0
                ob1 = w * color[j, 1] * a1
                ob2 = w * color[j, 2] * a2
                if not skipped:
                    one_m = 1.0 - alpha
                    dalpha = g0 * (t_here * color[j, 0] * a0 - suf0 / one_m) \
                        + g1 * (t_here * color[j, 1] * a1 - suf1 / one_m) \
                        + g2 * (t_here * color[j, 2] * a2 - suf2 / one_m)
                    if araw <= ALPHA_CLAMP:
                        e_dopacity[e] += dalpha * gk
                        dqv = -0.5 * (dalpha * opacity[j]) * gk
                        e_dinvcov[e, 0] += dqv * dx * dx
                        e_dinvcov[e, 1] += dqv * 2.0 * dx * dy
                        e_dinvcov[e, 2] += dqv * dy * dy
                        dmx = -2.0 * dqv * (invcov[j, 0] * dx + invcov[j, 1] * dy)
                        dmy = -2.0 * dqv * (invcov[j, 1] * dx + invcov[j, 2] * dy)
                        e_dmean2d[e, 0] += dmx
                        e_dmean2d[e, 1] += dmy
                        e_densnorm[e] += math.sqrt((dmx * half_w) ** 2
                                                   + (dmy * half_h) ** 2)
                    e_dcolor[e, 0] += g0 * w * a0
                    e_dcolor[e, 1] += g1 * w * a1
                    e_dcolor[e, 2] += g2 * w * a2
                if has_medium:
                    ds = -(g0 * ob0 * sa0 + g1 * ob1 * sa1 + g2 * ob2 * sa2)
                    dtb = t_here - t_right
                    ds += g0 * cm0 * sb0 * b0 * dtb \
                        + g1 * cm1 * sb1 * b1 * dtb \
                        + g2 * cm2 * sb2 * b2 * dtb
                    e_ddepth[e] += ds
                    if k > 0:
                        sp = depth[tile_entries[e - 1]]
                    else:
                        sp = 0.0
                    pb0 = math.exp(-sb0 * sp)
                    pb1 = math.exp(-sb1 * sp)
                    pb2 = math.exp(-sb2 * sp)
                    d_cmed[py, px, 0] += g0 * t_here * (pb0 - b0)
                    d_cmed[py, px, 1] += g1 * t_here * (pb1 - b1)
                    d_cmed[py, px, 2] += g2 * t_here * (pb2 - b2)
                    # dL/dB_j = g c_med (t_right - t_here); dB/dsigma = -s B
                    d_sbs[py, px, 0] += g0 * cm0 * (t_right - t_here) * (-s * b0)
                    d_sbs[py, px, 1] += g1 * cm1 * (t_right - t_here) * (-s * b1)
                    d_sbs[py, px, 2] += g2 * cm2 * (t_right - t_here) * (-s * b2)
                    d_sattn[py, px, 0] += -g0 * ob0 * s
                    d_sattn[py, px, 1] += -g1 * ob1 * s
                    d_sattn[py, px, 2] += -g2 * ob2 * s
                    suf0 += ob0 + t_here * cm0 * (pb0 - b0)
                    suf1 += ob1 + t_here * cm1 * (pb1 - b1)
                    suf2 += ob2 + t_here * cm2 * (pb2 - b2)
                else:
                    suf0 += ob0
                    suf1 += ob1
                    suf2 += ob2
                t_right = t_here
                tcur = t_here


@njit(fastmath=False, cache=True)
def _backward_serial(tile_starts, tile_entries, tiles_x,
                     mean2d, invcov, opacity, color, depth,
                     c_med, s_attn, s_bs, has_medium, t_stop,
                     grad_full, t_final, n_proc, half_w, half_h,
                     e_dcolor, e_dmean2d, e_dinvcov, e_dopacity, e_ddepth,
                     e_densnorm, d_cmed, d_sattn, d_sbs):
    for t in range(tile_starts.shape[0] - 1):
        _backward_tile(t, tile_starts, tile_entries, tiles_x,
                       mean2d, invcov, opacity, color, depth,
                       c_med, s_attn, s_bs, has_medium, t_stop,
                       grad_full, t_final, n_proc, half_w, half_h,
                       e_dcolor, e_dmean2d, e_dinvcov, e_dopacity, e_ddepth,
                       e_densnorm, d_cmed, d_sattn, d_sbs)


@njit(parallel=True, fastmath=False, cache=True)
def _backward_parallel(tile_starts, tile_entries, tiles_x,
                       mean2d, invcov, opacity, color, depth,
                       c_med, s_attn, s_bs, has_medium, t_stop,
                       grad_full, t_final, n_proc, half_w, half_h,
                       e_dcolor, e_dmean2d, e_dinvcov, e_dopacity, e_ddepth,
                       e_densnorm, d_cmed, d_sattn, d_sbs):
    for t in prange(tile_starts.shape[0] - 1):
        _backward_tile(t, tile_starts, tile_entries, tiles_x,
                       mean2d, invcov, opacity, color, depth,
                       c_med, s_attn, s_bs, has_medium, t_stop,
                       grad_full, t_final, n_proc, half_w, half_h,
                       e_dcolor, e_dmean2d, e_dinvcov, e_dopacity, e_ddepth,
                       e_densnorm, d_cmed, d_sattn, d_sbs)


def backward(tile_starts, tile_entries, tiles_x,
             mean2d, invcov, opacity, color, depth,
             c_med, s_attn, s_bs, has_medium, t_stop,
             grad_full, t_final, n_proc, half_w, half_h,
             e_dcolor, e_dmean2d, e_dinvcov, e_dopacity, e_ddepth,
             e_densnorm, d_cmed, d_sattn, d_sbs):
    """Reverse walk per pixel; per-entry gradients land in e_* slots.

    e_dopacity is wrt sigmoid(opacity_logit); e_dinvcov is packed (a, b, c)
    for the symmetric inverse covariance; e_densnorm sums, over pixels, the
    norms of per-pixel 2D-mean gradients scaled to half-image units.
    """
    driver = _backward_parallel if tile_starts.shape[0] - 1 >= PARALLEL_MIN_TILES \
        else _backward_serial
    driver(tile_starts, tile_entries, tiles_x, mean2d, invcov, opacity, color,
           depth, c_med, s_attn, s_bs, has_medium, t_stop,
           grad_full, t_final, n_proc, half_w, half_h,
           e_dcolor, e_dmean2d, e_dinvcov, e_dopacity, e_ddepth, e_densnorm,
           d_cmed, d_sattn, d_sbs)
