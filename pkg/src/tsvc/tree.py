"""Tree-structured varying-coefficient models.

The predictor is ``eta(x) = b0 + sum_j beta_j(x) * x_j`` where each
coefficient function ``beta_j`` is piecewise constant over a binary
tree whose split rules test the *other* covariates (the effect
modifiers).  Fitting is greedy: every admissible one-split refinement
of the current trees is scored by the residual sum of squares of a
full least-squares refit, and the best one is kept.  Repeating this
yields a nested path of models with 0..s_max splits.

A model with s splits spends ``p + s + 1`` coefficients: the intercept
plus one coefficient per leaf across all p trees.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .core import Dataset, LinearFit, solve_least_squares
from .errors import (
    DimensionMismatchError,
    EmptyLeafError,
    NoAdmissibleSplitError,
    RankDeficientError,
    ValidationError,
)

# Candidates whose added design direction has squared norm below this
# fraction of the column norm are treated as rank deficient and skipped.
_DEGENERATE_RTOL = 1e-10


@dataclass(frozen=True)
class LeafNode:
    leaf_id: int


@dataclass(frozen=True)
class SplitNode:
    modifier: int
    threshold: float
    left: "LeafNode | SplitNode"   # x[modifier] <= threshold
    right: "LeafNode | SplitNode"  # x[modifier] >  threshold


@dataclass(frozen=True)
class SplitRule:
    """One refinement step: split ``parent_leaf`` of the tree for
    covariate ``target`` on ``modifier`` at ``threshold``."""

    target: int
    modifier: int
    threshold: float
    parent_leaf: int

    def __post_init__(self):
        if self.target == self.modifier:
            raise ValidationError("a covariate cannot modify its own coefficient")


@dataclass(frozen=True)
class CoefficientTree:
    """Binary tree defining one piecewise-constant coefficient function.

    ``leaves`` lists the active leaf ids in creation order, which is
    also the column order of the expanded design.  ``coefficients``
    aligns with ``leaves`` and is None while a tree is still a search
    structure rather than part of a fitted model.
    """

    target: int
    root: LeafNode | SplitNode
    leaves: tuple[int, ...]
    n_created: int
    coefficients: tuple[float, ...] | None = None

    @classmethod
    def stump(cls, target: int) -> "CoefficientTree":
        return cls(target=target, root=LeafNode(0), leaves=(0,), n_created=1)

    @property
    def n_splits(self) -> int:
        return len(self.leaves) - 1

    def split(self, rule: SplitRule) -> "CoefficientTree":
        """Return a new tree with ``rule.parent_leaf`` replaced by a
        split node; children get the next two creation ids."""
        if rule.target != self.target:
            raise ValidationError(
                f"rule targets covariate {rule.target}, tree is for {self.target}"
            )
        if rule.parent_leaf not in self.leaves:
            raise ValidationError(f"leaf {rule.parent_leaf} is not active")
        left_id, right_id = self.n_created, self.n_created + 1

        def rebuild(node):
            if isinstance(node, LeafNode):
                if node.leaf_id != rule.parent_leaf:
                    return node
                return SplitNode(
                    modifier=rule.modifier,
                    threshold=rule.threshold,
                    left=LeafNode(left_id),
                    right=LeafNode(right_id),
                )
            left = rebuild(node.left)
            right = rebuild(node.right)
            if left is node.left and right is node.right:
                return node
            return SplitNode(node.modifier, node.threshold, left, right)

        leaves = tuple(m for m in self.leaves if m != rule.parent_leaf) + (
            left_id,
            right_id,
        )
        return CoefficientTree(
            target=self.target,
            root=rebuild(self.root),
            leaves=leaves,
            n_created=self.n_created + 2,
        )

    def assign(self, X: np.ndarray) -> np.ndarray:
        """Route every row of X to a leaf; returns an int array of leaf ids."""
        out = np.empty(X.shape[0], dtype=np.int64)
        stack = [(self.root, np.arange(X.shape[0]))]
        while stack:
            node, idx = stack.pop()
            if isinstance(node, LeafNode):
                out[idx] = node.leaf_id
                continue
            mask = X[idx, node.modifier] <= node.threshold
            stack.append((node.left, idx[mask]))
            stack.append((node.right, idx[~mask]))
        return out

    def with_coefficients(self, values) -> "CoefficientTree":
        values = tuple(float(v) for v in values)
        if len(values) != len(self.leaves):
            raise DimensionMismatchError(
                f"expected {len(self.leaves)} coefficients, got {len(values)}"
            )
        return replace(self, coefficients=values)

    def coefficient_map(self) -> np.ndarray:
        """Dense lookup array: leaf id -> coefficient."""
        if self.coefficients is None:
            raise ValidationError("tree carries no coefficients")
        out = np.full(self.n_created, np.nan)
        out[list(self.leaves)] = self.coefficients
        return out


@dataclass(frozen=True)
class TsvcModel:
    """A fitted varying-coefficient model with ``s`` splits in total.

    ``fit`` holds the in-sample least-squares solve and is None for
    models reconstructed from JSON (the training data is not stored).
    """

    intercept: float
    trees: tuple[CoefficientTree, ...]
    s: int
    n: int
    p: int
    names: tuple[str, ...]
    rss: float
    fit: LinearFit | None = None

    @property
    def sigma2_hat(self) -> float:
        return self.rss / self.n

    @property
    def n_params(self) -> int:
        return self.p + self.s + 1

    def predict(self, X_new) -> np.ndarray:
        return predict(self, X_new)


@dataclass(frozen=True)
class ModelPath:
    """Nested greedy path M0 .. Ms, plus the rule chosen at each step."""

    models: tuple[TsvcModel, ...]
    rules: tuple[SplitRule, ...]
    s_max: int

    @property
    def deviances(self) -> tuple[float, ...]:
        return tuple(m.rss for m in self.models)

    def model_at(self, s: int) -> TsvcModel:
        for m in self.models:
            if m.s == s:
                return m
        raise ValidationError(f"path has no model with {s} splits")


# ---------------------------------------------------------------------------
# design expansion
# ---------------------------------------------------------------------------

def _column_layout(trees) -> list[tuple[int, int]]:
    """(covariate, leaf id) pairs in design-column order, after the intercept."""
    return [(tree.target, leaf) for tree in trees for leaf in tree.leaves]


def build_design(dataset: Dataset, trees) -> np.ndarray:
    """Expand the trees into a least-squares design matrix.

    Column 0 is all ones; then for each covariate j in index order, one
    column per leaf of its tree in creation order, equal to
    ``x_j * I(row falls in that leaf)``.

    Raises
    ------
    EmptyLeafError
        If some leaf captures no observation.
    """
    X = dataset.X
    n = X.shape[0]
    if len(trees) != dataset.p:
        raise DimensionMismatchError(
            f"expected {dataset.p} trees, got {len(trees)}"
        )
    cols = [np.ones(n)]
    for tree in trees:
        leaf_of = tree.assign(X)
        xj = X[:, tree.target]
        for leaf in tree.leaves:
            mask = leaf_of == leaf
            if not mask.any():
                raise EmptyLeafError(
                    f"leaf {leaf} of the tree for covariate {tree.target} is empty"
                )
            cols.append(np.where(mask, xj, 0.0))
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# candidate enumeration and greedy growth
# ---------------------------------------------------------------------------

def _leaf_split_points(x_mod: np.ndarray, min_leaf: int):
    """Admissible thresholds within one leaf, given the modifier values.

    Returns (order, boundary_positions, thresholds) where ``order``
    sorts the leaf observations by modifier value and each boundary
    position t means the left child takes the first t+1 sorted rows.
    Thresholds are midpoints between adjacent distinct values, kept
    only when both children hold at least ``min_leaf`` observations.
    """
    size = x_mod.shape[0]
    order = np.argsort(x_mod, kind="stable")
    xs = x_mod[order]
    boundaries = np.nonzero(xs[1:] > xs[:-1])[0]
    if boundaries.size:
        left_counts = boundaries + 1
        keep = (left_counts >= min_leaf) & (size - left_counts >= min_leaf)
        boundaries = boundaries[keep]
    thresholds = 0.5 * (xs[boundaries] + xs[boundaries + 1])
    return order, boundaries, thresholds


def enumerate_candidates(dataset: Dataset, trees, min_leaf: int) -> list[SplitRule]:
    """All admissible one-split refinements, deterministically ordered.

    Order: target covariate ascending, then modifier ascending, then
    parent leaf id ascending, then threshold ascending.
    """
    if min_leaf < 1:
        raise ValidationError(f"min_leaf must be >= 1, got {min_leaf}")
    X = dataset.X
    rules = []
    for tree in trees:
        j = tree.target
        leaf_of = tree.assign(X)
        for k in range(dataset.p):
            if k == j:
                continue
            for leaf in sorted(tree.leaves):
                idx = np.nonzero(leaf_of == leaf)[0]
                if idx.size < 2 * min_leaf:
                    continue
                _, _, thresholds = _leaf_split_points(X[idx, k], min_leaf)
                for c in thresholds:
                    rules.append(
                        SplitRule(target=j, modifier=k, threshold=float(c), parent_leaf=leaf)
                    )
    return rules


def _make_model(dataset: Dataset, trees, fit: LinearFit) -> TsvcModel:
    """Distribute fitted coefficients onto the trees."""
    layout = _column_layout(trees)
    per_tree: dict[int, list[float]] = {tree.target: [] for tree in trees}
    for (j, _leaf), value in zip(layout, fit.coefficients[1:]):
        per_tree[j].append(float(value))
    fitted_trees = tuple(tree.with_coefficients(per_tree[tree.target]) for tree in trees)
    s = sum(tree.n_splits for tree in trees)
    return TsvcModel(
        intercept=float(fit.coefficients[0]),
        trees=fitted_trees,
        s=s,
        n=dataset.n,
        p=dataset.p,
        names=dataset.names,
        rss=fit.rss,
        fit=fit,
    )


def grow_one_split(dataset: Dataset, trees, min_leaf: int = 10):
    """Best one-split refinement of the current trees.

    Every admissible rule is scored by the residual sum of squares of
    the refitted model on all observations; the smallest wins, with
    ties broken by enumeration order.  Scoring uses the orthogonal
    projection update: replacing one leaf column by its two children
    spans the same space as adding the left-child column, so the rss
    drop is ``(u.r)^2 / ||u_perp||^2`` for the added column u, the
    base-fit residual r and the component u_perp of u orthogonal to
    the base design.  The winning rule is then refitted exactly.

    Returns
    -------
    (SplitRule, TsvcModel)

    Raises
    ------
    NoAdmissibleSplitError
        If no candidate satisfies ``min_leaf`` (or all are degenerate).
    """
    if min_leaf < 1:
        raise ValidationError(f"min_leaf must be >= 1, got {min_leaf}")
    X, y = dataset.X, dataset.y
    base_design = build_design(dataset, trees)
    base_fit, Q = solve_least_squares(base_design, y, return_basis=True)
    resid = y - base_fit.fitted

    banned: set[tuple[int, int, int, float]] = set()
    while True:
        best_gain = -1.0
        best_rule = None
        for tree in trees:
            j = tree.target
            leaf_of = tree.assign(X)
            for k in range(dataset.p):
                if k == j:
                    continue
                for leaf in sorted(tree.leaves):
                    idx = np.nonzero(leaf_of == leaf)[0]
                    if idx.size < 2 * min_leaf:
                        continue
                    order, bnd, thresholds = _leaf_split_points(X[idx, k], min_leaf)
                    if bnd.size == 0:
                        continue
                    ids = idx[order]
                    v = X[ids, j]
                    cum_vr = np.cumsum(v * resid[ids])
                    cum_vv = np.cumsum(v * v)
                    cum_vQ = np.cumsum(v[:, None] * Q[ids, :], axis=0)
                    uu = cum_vv[bnd]
                    den = uu - np.einsum("ij,ij->i", cum_vQ[bnd, :], cum_vQ[bnd, :])
                    good = (uu > 0.0) & (den > _DEGENERATE_RTOL * uu)
                    if banned:
                        good &= np.array(
                            [(j, k, leaf, float(c)) not in banned for c in thresholds]
                        )
                    if not good.any():
                        continue
                    gains = np.where(good, cum_vr[bnd] ** 2 / np.where(den > 0, den, 1.0), -np.inf)
                    t = int(np.argmax(gains))
                    if gains[t] > best_gain:
                        best_gain = float(gains[t])
                        best_rule = SplitRule(
                            target=j,
                            modifier=k,
                            threshold=float(thresholds[t]),
                            parent_leaf=leaf,
                        )
        if best_rule is None:
            raise NoAdmissibleSplitError("no admissible split candidate")

        new_trees = tuple(
            tree.split(best_rule) if tree.target == best_rule.target else tree
            for tree in trees
        )
        try:
            fit = solve_least_squares(build_design(dataset, new_trees), y)
        except RankDeficientError:
            # Scored as improving but singular on exact refit: drop the
            # candidate and rescan.
            banned.add(
                (best_rule.target, best_rule.modifier, best_rule.parent_leaf,
                 best_rule.threshold)
            )
            continue
        return best_rule, _make_model(dataset, new_trees, fit)


def fit_path(dataset: Dataset, s_max: int, min_leaf: int = 10) -> ModelPath:
    """Greedy nested path of models with 0 .. s_max splits.

    The path may stop early when no admissible split remains.  The
    residual sum of squares never increases along the path.
    """
    if s_max < 0:
        raise ValidationError(f"s_max must be >= 0, got {s_max}")
    trees = tuple(CoefficientTree.stump(j) for j in range(dataset.p))
    fit0 = solve_least_squares(build_design(dataset, trees), dataset.y)
    models = [_make_model(dataset, trees, fit0)]
    rules: list[SplitRule] = []
    while len(rules) < s_max:
        try:
            rule, model = grow_one_split(dataset, models[-1].trees, min_leaf)
        except NoAdmissibleSplitError:
            break
        models.append(model)
        rules.append(rule)
    return ModelPath(models=tuple(models), rules=tuple(rules), s_max=s_max)


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------

def predict(model: TsvcModel, X_new) -> np.ndarray:
    """Evaluate the fitted predictor on new covariate rows."""
    X_new = np.asarray(X_new, dtype=float)
    if X_new.ndim == 1:
        X_new = X_new.reshape(1, -1)
    if X_new.ndim != 2 or X_new.shape[1] != model.p:
        raise DimensionMismatchError(
            f"expected {model.p} columns, got shape {X_new.shape}"
        )
    eta = np.full(X_new.shape[0], model.intercept)
    for tree in model.trees:
        coef = tree.coefficient_map()[tree.assign(X_new)]
        eta += coef * X_new[:, tree.target]
    return eta


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------

def _node_to_dict(node):
    if isinstance(node, LeafNode):
        return {"kind": "leaf", "id": node.leaf_id}
    return {
        "kind": "split",
        "modifier": node.modifier,
        "threshold": node.threshold,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(doc):
    if doc["kind"] == "leaf":
        return LeafNode(int(doc["id"]))
    return SplitNode(
        modifier=int(doc["modifier"]),
        threshold=float(doc["threshold"]),
        left=_node_from_dict(doc["left"]),
        right=_node_from_dict(doc["right"]),
    )


def model_to_dict(model: TsvcModel) -> dict:
    return {
        "intercept": model.intercept,
        "s": model.s,
        "n": model.n,
        "p": model.p,
        "rss": model.rss,
        "names": list(model.names),
        "trees": [
            {
                "target": tree.target,
                "root": _node_to_dict(tree.root),
                "leaves": [
                    {"id": leaf, "coefficient": coef}
                    for leaf, coef in zip(tree.leaves, tree.coefficients)
                ],
            }
            for tree in model.trees
        ],
    }


def model_from_dict(doc: dict) -> TsvcModel:
    trees = []
    for tdoc in doc["trees"]:
        root = _node_from_dict(tdoc["root"])
        leaves = tuple(int(item["id"]) for item in tdoc["leaves"])
        coefficients = tuple(float(item["coefficient"]) for item in tdoc["leaves"])
        max_id = max(leaves)

        def walk(node):
            if isinstance(node, LeafNode):
                return node.leaf_id
            return max(walk(node.left), walk(node.right))

        max_id = max(max_id, walk(root))
        trees.append(
            CoefficientTree(
                target=int(tdoc["target"]),
                root=root,
                leaves=leaves,
                n_created=max_id + 1,
                coefficients=coefficients,
            )
        )
    return TsvcModel(
        intercept=float(doc["intercept"]),
        trees=tuple(trees),
        s=int(doc["s"]),
        n=int(doc["n"]),
        p=int(doc["p"]),
        names=tuple(doc["names"]),
        rss=float(doc["rss"]),
        fit=None,
    )


def model_to_json(model: TsvcModel, indent: int = 2) -> str:
    return json.dumps(model_to_dict(model), indent=indent)


def model_from_json(text: str) -> TsvcModel:
    return model_from_dict(json.loads(text))
