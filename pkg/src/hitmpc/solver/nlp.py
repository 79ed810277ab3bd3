"""Structured horizon NLP: variable layout, evaluation blocks, assembly.

An :class:`NlpInstance` is a bag of named variable groups plus blocks of
four kinds evaluated against the packed variable vector:

* ``residual``  - least-squares terms, cost is half their squared norm;
* ``eq``        - equality rows c(z) = 0;
* ``ineq``      - inequality rows g(z) <= 0;
* ``compl``     - complementarity products relaxed to g(z) <= sigma, with
                  ``sigma`` read from the instance parameters at every
                  evaluation.

Blocks declare exactly the variable groups they read; Jacobians are
analytic where provided and forward differences otherwise. Equality blocks
of the shape z[defined] - phi(other groups) = 0 may declare ``defines`` so
the SQP layer can eliminate the defined group from its subproblems
(single-shooting style condensing) while the instance itself, including
certificates and derivative checks, always works in the full space.

Parameters live in a plain dict (``instance.params``) so one assembled
instance is re-used across control steps by rewriting references, initial
states and prediction inputs. One instance must not be solved by two
callers at once; separate instances are independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RESIDUAL = "residual"
EQ = "eq"
INEQ = "ineq"
COMPL = "compl"

_KINDS = (RESIDUAL, EQ, INEQ, COMPL)
FD_STEP = 1e-6


class AssemblyError(ValueError):
    """Inconsistent layout/blocks; message names the offending block."""


class VariableLayout:
    """Ordered named variable groups packed into one flat vector."""

    def __init__(self):
        self._slices: dict[str, slice] = {}
        self._n = 0

    def add(self, name: str, dim: int) -> slice:
        if name in self._slices:
            raise AssemblyError(f"variable group {name!r} declared twice")
        if dim <= 0:
            raise AssemblyError(f"variable group {name!r} must have positive size")
        s = slice(self._n, self._n + dim)
        self._slices[name] = s
        self._n += dim
        return s

    def __contains__(self, name):
        return name in self._slices

    def slice_of(self, name: str) -> slice:
        return self._slices[name]

    def dim_of(self, name: str) -> int:
        s = self._slices[name]
        return s.stop - s.start

    @property
    def names(self):
        return list(self._slices)

    @property
    def n_vars(self) -> int:
        return self._n


@dataclass
class Block:
    """One evaluation block.

    ``eval_fn(parts, params)`` receives the block's variable groups as a
    list of arrays; ``jac_fn`` returns one ``(dim, group_dim)`` array per
    group or may be None to fall back to forward differences.
    ``defines`` marks eq blocks of the form z[defines] - phi(rest) = 0
    whose Jacobian w.r.t. the defined group is the identity.
    """

    name: str
    kind: str
    var_groups: tuple[str, ...]
    dim: int
    eval_fn: object
    jac_fn: object = None
    defines: str | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise AssemblyError(f"block {self.name!r}: unknown kind {self.kind!r}")
        if self.defines is not None and self.kind != EQ:
            raise AssemblyError(f"block {self.name!r}: only eq blocks may define a variable")

    def values(self, parts, params):
        out = np.atleast_1d(np.asarray(self.eval_fn(parts, params), dtype=float))
        if out.shape != (self.dim,):
            raise AssemblyError(
                f"block {self.name!r} returned shape {out.shape}, declared dim {self.dim}"
            )
        return out

    def jacobians(self, parts, params):
        if self.jac_fn is not None:
            jacs = self.jac_fn(parts, params)
        else:
            jacs = self._fd_jacobians(parts, params)
        if len(jacs) != len(self.var_groups):
            raise AssemblyError(f"block {self.name!r}: one Jacobian per variable group required")
        out = []
        for g, j in zip(self.var_groups, jacs):
            j = np.atleast_2d(np.asarray(j, dtype=float))
            out.append(j)
            del g
        return out

    def _fd_jacobians(self, parts, params):
        base = self.values(parts, params)
        jacs = []
        for gi, part in enumerate(parts):
            cols = []
            for d in range(part.shape[0]):
                h = FD_STEP * max(1.0, abs(part[d]))
                bumped = [p.copy() if i == gi else p for i, p in enumerate(parts)]
                bumped[gi][d] += h
                cols.append((self.values(bumped, params) - base) / h)
            jacs.append(np.array(cols).T if cols else np.zeros((self.dim, 0)))
        return jacs


def linear_block(name, kind, var_groups, mats, offset_param=None, constant=None, defines=None):
    """Block A_1 z_1 + ... + A_k z_k + constant (+ params[offset_param]).

    Constant Jacobians; ``offset_param`` lets the per-step parameters move
    the right-hand side without rebuilding the block.
    """
    mats = [np.atleast_2d(np.asarray(m, dtype=float)) for m in mats]
    dim = mats[0].shape[0]
    const = np.zeros(dim) if constant is None else np.asarray(constant, dtype=float)

    def ev(parts, params):
        out = const.copy()
        if offset_param is not None:
            out = out + params[offset_param]
        for m, p in zip(mats, parts):
            out += m @ p
        return out

    def jac(parts, params):
        return [m for m in mats]

    return Block(name, kind, tuple(var_groups), dim, ev, jac, defines=defines)


@dataclass
class NlpInstance:
    layout: VariableLayout
    blocks: list[Block]
    params: dict = field(default_factory=dict)
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        if self.lb is None:
            self.lb = np.full(self.layout.n_vars, -np.inf)
        if self.ub is None:
            self.ub = np.full(self.layout.n_vars, np.inf)

    @property
    def n_vars(self) -> int:
        return self.layout.n_vars

    def blocks_of(self, kind):
        return [b for b in self.blocks if b.kind == kind]

    def parts_for(self, block: Block, z):
        return [z[self.layout.slice_of(g)] for g in block.var_groups]

    def eval_block(self, block: Block, z):
        return block.values(self.parts_for(block, z), self.params)

    def eval_block_with_jac(self, block: Block, z):
        parts = self.parts_for(block, z)
        return block.values(parts, self.params), block.jacobians(parts, self.params)

    def set_bounds(self, group: str, lb=None, ub=None):
        s = self.layout.slice_of(group)
        if lb is not None:
            self.lb[s] = lb
        if ub is not None:
            self.ub[s] = ub

    def stacked(self, kind, z, with_jac=False):
        """Stacked values (and dense Jacobian) of all blocks of a kind."""
        blocks = self.blocks_of(kind)
        m = sum(b.dim for b in blocks)
        vals = np.zeros(m)
        jac = np.zeros((m, self.n_vars)) if with_jac else None
        row = 0
        for b in blocks:
            if with_jac:
                v, js = self.eval_block_with_jac(b, z)
                for g, j in zip(b.var_groups, js):
                    jac[row:row + b.dim, self.layout.slice_of(g)] += j
            else:
                v = self.eval_block(b, z)
            vals[row:row + b.dim] = v
            row += b.dim
        return (vals, jac) if with_jac else vals

    def cost(self, z) -> float:
        r = self.stacked(RESIDUAL, z)
        return 0.5 * float(r @ r)

    def row_owner(self, kind):
        """Block name per stacked row, for diagnostics."""
        out = []
        for b in self.blocks_of(kind):
            out.extend([b.name] * b.dim)
        return out


def assemble(layout: VariableLayout, blocks, params=None, lb=None, ub=None) -> NlpInstance:
    """Validate and build an instance.

    Raises :class:`AssemblyError` naming the block on dangling variable
    groups or inconsistent dimensions, and on variable groups that no block
    references.
    """
    params = {} if params is None else params
    if any(b.kind == COMPL for b in blocks):
        params.setdefault("sigma", 0.0)
    referenced = set()
    for b in blocks:
        for g in b.var_groups:
            if g not in layout:
                raise AssemblyError(f"block {b.name!r} references unknown variable group {g!r}")
            referenced.add(g)
        if b.defines is not None:
            if b.defines not in layout:
                raise AssemblyError(f"block {b.name!r} defines unknown group {b.defines!r}")
            if b.defines not in b.var_groups:
                raise AssemblyError(f"block {b.name!r} must reference the group it defines")
            if b.dim != layout.dim_of(b.defines):
                raise AssemblyError(f"block {b.name!r}: defining dim mismatch")
    dangling = [n for n in layout.names if n not in referenced]
    if dangling:
        raise AssemblyError(f"variable groups referenced by no block: {dangling}")
    inst = NlpInstance(layout, list(blocks), params)
    if lb is not None:
        inst.lb = np.asarray(lb, dtype=float).copy()
    if ub is not None:
        inst.ub = np.asarray(ub, dtype=float).copy()
    # probe evaluation once to surface dimension mistakes at assembly time
    z = np.zeros(layout.n_vars)
    for b in blocks:
        inst.eval_block(b, z)
    return inst


def check_derivatives(nlp: NlpInstance, point, step: float = 1e-6):
    """Central finite differences against every block's Jacobians.

    Returns (worst relative deviation, offending block name, per-block
    dict). The relative deviation uses max(1, |analytic|, |fd|) scaling.
    """
    z = np.asarray(point, dtype=float)
    worst = 0.0
    worst_block = ""
    per_block = {}
    for b in nlp.blocks:
        parts = nlp.parts_for(b, z)
        jacs = b.jacobians(parts, nlp.params)
        dev = 0.0
        for gi, part in enumerate(parts):
            for d in range(part.shape[0]):
                h = step * max(1.0, abs(part[d]))
                hi = [p.copy() if i == gi else p for i, p in enumerate(parts)]
                lo = [p.copy() if i == gi else p for i, p in enumerate(parts)]
                hi[gi][d] += h
                lo[gi][d] -= h
                fd = (b.values(hi, nlp.params) - b.values(lo, nlp.params)) / (2 * h)
                ana = jacs[gi][:, d]
                scale = np.maximum(1.0, np.maximum(np.abs(ana), np.abs(fd)))
                dev = max(dev, float((np.abs(ana - fd) / scale).max(initial=0.0)))
        per_block[b.name] = dev
        if dev > worst:
            worst = dev
            worst_block = b.name
    return worst, worst_block, per_block


def jacobian_sparsity(nlp: NlpInstance, kind):
    """Declared sparsity over variable groups as a boolean row mask."""
    blocks = nlp.blocks_of(kind)
    m = sum(b.dim for b in blocks)
    mask = np.zeros((m, nlp.n_vars), dtype=bool)
    row = 0
    for b in blocks:
        for g in b.var_groups:
            mask[row:row + b.dim, nlp.layout.slice_of(g)] = True
        row += b.dim
    return mask
