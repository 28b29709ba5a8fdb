"""Track-oriented multi-hypothesis association.

Each track keeps a tree of association hypotheses.  Every frame, each
leaf branches on its gated detections plus a missed-detection child;
one leaf per tree is then committed by solving a maximum-weight
independent set over all leaves, where edges join leaves of the same
tree and leaves whose histories share a detection.  Detections left
unclaimed by the committed hypothesis spawn new tentative trees, and
each tree is pruned back to the committed leaf's ancestor a fixed
number of frames up, so the per-tree branching stays bounded while
ambiguous frames remain undecided for that window.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

from .comparators import DeepEkfComparator, comparator_registry, fallback_fusion_config
from .core import BoundingBox, BranchView, ComparatorScore, Detection, SignatureComparator
from .errors import FrameOrderViolation
from .fusion import FusionConfig, fuse, fused_log_score, normalize
from .kinematic import (
    KinematicState,
    NoiseConfig,
    chi2_gate_threshold,
    innovation_of,
    kf_init,
    kf_predict,
    kf_update,
    mahalanobis_sq,
)
from .mwis import greedy_mwis, solve_mwis

TENTATIVE = "tentative"
CONFIRMED = "confirmed"
DEAD = "dead"


@dataclass
class MhtConfig:
    """Association knobs.

    ``miss_log_penalty`` and ``new_track_log_penalty`` are log-domain
    scores added for a missed-detection branch and a newly spawned
    track root; defaults correspond to miss probability 0.3 and
    new-track probability 0.1.
    """

    gate_prob: float = 0.99
    nscan: int = 3
    max_misses: int = 12
    confirm_hits: int = 2
    max_leaves_per_tree: int = 32
    miss_log_penalty: float = math.log(0.3)
    new_track_log_penalty: float = math.log(0.1)
    max_exact_vertices: int = 500
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    def __post_init__(self):
        if not (0.0 < self.gate_prob < 1.0):
            raise ValueError("gate_prob must be in (0, 1)")
        if self.nscan < 1:
            raise ValueError("nscan must be >= 1")
        if self.max_misses < 0:
            raise ValueError("max_misses must be >= 0")
        if self.confirm_hits < 1:
            raise ValueError("confirm_hits must be >= 1")
        if self.max_leaves_per_tree < 1:
            raise ValueError("max_leaves_per_tree must be >= 1")
        for name in ("miss_log_penalty", "new_track_log_penalty"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


class TrackNode:
    """One hypothesis node: an association (or miss) at one frame."""

    __slots__ = (
        "node_id",
        "frame_index",
        "depth",
        "detection",
        "kinematic",
        "log_score",
        "parent",
        "misses",
        "n_obs",
        "cache",
        "comparator_scores",
        "fused",
    )

    def __init__(
        self,
        node_id: int,
        frame_index: int,
        depth: int,
        detection: Optional[Detection],
        kinematic: KinematicState,
        log_score: float,
        parent: Optional["TrackNode"],
        misses: int,
        n_obs: int,
        cache: Dict[str, object],
        comparator_scores: Tuple[ComparatorScore, ...] = (),
        fused: Optional[float] = None,
    ) -> None:
        self.node_id = node_id
        self.frame_index = frame_index
        self.depth = depth
        self.detection = detection
        self.kinematic = kinematic
        self.log_score = log_score
        self.parent = parent
        self.misses = misses
        self.n_obs = n_obs
        self.cache = cache
        self.comparator_scores = comparator_scores
        self.fused = fused

    def history(self) -> Tuple[Tuple[int, Detection], ...]:
        """Associated observations on the root-to-node path, oldest first."""
        out: List[Tuple[int, Detection]] = []
        node: Optional[TrackNode] = self
        while node is not None:
            if node.detection is not None:
                out.append((node.frame_index, node.detection))
            node = node.parent
        out.reverse()
        return tuple(out)

    def detection_keys(self, min_frame: Optional[int] = None) -> Set[Tuple[int, int]]:
        """(frame, detection id) pairs claimed along the path.

        With ``min_frame``, claims at older frames are omitted; path
        frames strictly decrease upward, so the walk stops early.
        """
        out: Set[Tuple[int, int]] = set()
        node: Optional[TrackNode] = self
        while node is not None:
            if min_frame is not None and node.frame_index < min_frame:
                break
            if node.detection is not None:
                out.add((node.frame_index, node.detection.detection_id))
            node = node.parent
        return out

    def ancestor_at(self, depth: int) -> "TrackNode":
        node: TrackNode = self
        while node.depth > depth:
            assert node.parent is not None
            node = node.parent
        return node


class TrackTree:
    """All live hypotheses for one physical track."""

    __slots__ = (
        "tree_id",
        "root",
        "leaves",
        "status",
        "consec_hits",
        "selected_leaf",
        "committed_upto",
    )

    def __init__(self, tree_id: int, root: TrackNode) -> None:
        self.tree_id = tree_id
        self.root = root
        self.leaves: List[TrackNode] = [root]
        self.status = TENTATIVE
        self.consec_hits = 1  # the spawning detection counts as the first hit
        self.selected_leaf: Optional[TrackNode] = root
        self.committed_upto = -1  # deepest depth all leaves agree on


@dataclass(frozen=True)
class GlobalHypothesis:
    """The committed leaf per tree after conflict resolution."""

    selections: Tuple[Tuple[int, int], ...]  # (tree id, node id), tree-id order
    total_log_score: float


@dataclass(frozen=True)
class Assignment:
    """Per-frame emission for one confirmed track."""

    track_id: int
    frame_index: int
    detection_id: Optional[int]
    box: BoundingBox
    coasted: bool
    fused: Optional[float] = None
    comparator_scores: Tuple[ComparatorScore, ...] = ()


@dataclass(frozen=True)
class FrameResult:
    frame_index: int
    assignments: Tuple[Assignment, ...]
    hypothesis: GlobalHypothesis
    n_vertices: int
    used_greedy_fallback: bool
    spawned: Tuple[int, ...]
    died: Tuple[int, ...]


def build_conflict_graph(
    trees: Sequence[TrackTree],
    min_claim_frame: Optional[int] = None,
) -> Tuple[List[float], List[int], List[Tuple[TrackTree, TrackNode]]]:
    """Vertices are live leaves; weights are branch scores shifted to be
    positive (score - min + 1); edges join same-tree leaves and leaves
    sharing a (frame, detection) claim.

    ``min_claim_frame`` restricts shared-detection edges to claims at
    that frame or later.  Claims older than the revision window are
    already committed, so edges over them cannot change any future
    assignment; leaving them in only welds long-dead conflicts into one
    giant component.  Committed overlaps are handled separately by the
    tracker's duplicate-track resolution.
    """
    payload: List[Tuple[TrackTree, TrackNode]] = []
    for tree in trees:
        for leaf in tree.leaves:
            payload.append((tree, leaf))
    n = len(payload)
    if n == 0:
        return [], [], []
    raw = [leaf.log_score for _, leaf in payload]
    shift = min(raw)
    weights = [r - shift + 1.0 for r in raw]
    adjacency = [0] * n

    # Same-tree exclusivity.
    start = 0
    for tree in trees:
        k = len(tree.leaves)
        for i in range(start, start + k):
            for j in range(i + 1, start + k):
                adjacency[i] |= 1 << j
                adjacency[j] |= 1 << i
        start += k

    # Shared-detection exclusivity via an inverted index.
    claims: Dict[Tuple[int, int], List[int]] = {}
    for idx, (_, leaf) in enumerate(payload):
        for key in leaf.detection_keys(min_claim_frame):
            claims.setdefault(key, []).append(idx)
    for users in claims.values():
        for a in range(len(users)):
            for b in range(a + 1, len(users)):
                i, j = users[a], users[b]
                adjacency[i] |= 1 << j
                adjacency[j] |= 1 << i
    return weights, adjacency, payload


def coast_box(
    kinematic: KinematicState, history: Sequence[Tuple[int, Detection]]
) -> BoundingBox:
    """Box emitted while coasting: predicted center, last observed size."""
    w = h = 0.0
    if history:
        last_box = history[-1][1].box
        w, h = last_box.w, last_box.h
    cx, cy = float(kinematic.mean[0]), float(kinematic.mean[1])
    return BoundingBox(x=cx - w / 2.0, y=cy - h / 2.0, w=w, h=h)


def validate_detections(frame_index: int, detections: Sequence[Detection]) -> None:
    """Every detection must carry the frame's index and a unique id."""
    seen_ids: Set[int] = set()
    for det in detections:
        if det.frame_index != frame_index:
            raise ValueError(
                f"detection {det.detection_id} carries frame {det.frame_index}, "
                f"expected {frame_index}"
            )
        if det.detection_id in seen_ids:
            raise ValueError(f"duplicate detection id {det.detection_id} in frame")
        seen_ids.add(det.detection_id)


def nscan_prune(tree: TrackTree, selected: TrackNode, nscan: int) -> None:
    """Keep only leaves sharing the selected leaf's ancestor ``nscan``
    frames up; older frames are thereby committed."""
    target = selected.depth - nscan
    if target < 0:
        return
    anchor = selected.ancestor_at(target)
    tree.leaves = [leaf for leaf in tree.leaves if leaf.ancestor_at(target) is anchor]


def cap_leaves(tree: TrackTree, max_leaves: int) -> None:
    """Keep the best-scoring leaves (ties resolved to older nodes)."""
    if len(tree.leaves) <= max_leaves:
        return
    tree.leaves = sorted(tree.leaves, key=lambda n: (-n.log_score, n.node_id))[:max_leaves]


class MhtTracker:
    """Online multi-hypothesis tracker over per-frame detections."""

    def __init__(
        self,
        config: MhtConfig,
        fusion: FusionConfig,
        comparators: Sequence[SignatureComparator] = (),
    ) -> None:
        self.cfg = config
        self.fusion = fusion
        self._comparators = comparator_registry(comparators, fusion)
        self._fallback_fusion = fallback_fusion_config(fusion, config.noise, config.gate_prob)
        self._gate_threshold = chi2_gate_threshold(config.gate_prob)
        self.trees: Dict[int, TrackTree] = {}
        self._claims: Dict[Tuple[int, int], int] = {}  # committed claim -> tree id
        self._next_tree = 1
        self._next_node = 1
        self._last_frame: Optional[int] = None

    def _new_node_id(self) -> int:
        nid = self._next_node
        self._next_node += 1
        return nid

    def _dekf_min_history(self) -> int:
        comp = self._comparators.get("dekf")
        if isinstance(comp, DeepEkfComparator):
            return comp.min_history
        return 2

    def _live_trees(self) -> List[TrackTree]:
        return [t for t in self.trees.values() if t.status != DEAD]

    def _expand_leaf(
        self, tree: TrackTree, leaf: TrackNode, frame_index: int, detections: Sequence[Detection]
    ) -> List[TrackNode]:
        cfg = self.cfg
        dt = frame_index - leaf.frame_index
        predicted = kf_predict(leaf.kinematic, float(dt), cfg.noise)
        history = leaf.history()
        children: List[TrackNode] = []
        if leaf.misses + 1 <= cfg.max_misses:
            children.append(
                TrackNode(
                    node_id=self._new_node_id(),
                    frame_index=frame_index,
                    depth=leaf.depth + 1,
                    detection=None,
                    kinematic=predicted,
                    log_score=leaf.log_score + cfg.miss_log_penalty,
                    parent=leaf,
                    misses=leaf.misses + 1,
                    n_obs=leaf.n_obs,
                    cache=leaf.cache,  # same observation history, shared scratch
                )
            )
        use_fallback = (
            "dekf" in self.fusion.weights and len(history) < self._dekf_min_history()
        )
        active = self._fallback_fusion if use_fallback else self.fusion
        parent_cache = leaf.parent.cache if leaf.parent is not None else None
        for det in detections:
            nu, S = innovation_of(predicted, det, cfg.noise)
            if mahalanobis_sq(nu, S) > self._gate_threshold:
                continue
            view = BranchView(
                key=leaf.node_id,
                history=history,
                predicted_mean=predicted.mean,
                predicted_cov=predicted.cov,
                innovation=nu,
                innovation_cov=S,
                dt=dt,
                cache=leaf.cache,
                parent_cache=parent_cache,
            )
            scores: Dict[str, ComparatorScore] = {}
            for name in active.weights:
                raw = self._comparators[name].score(view, det)
                scores[name] = ComparatorScore(
                    name=name, raw=raw, normalized=normalize(raw, active.normalizers[name])
                )
            fused = fuse(scores, active)
            posterior, _, _ = kf_update(predicted, det, cfg.noise)
            children.append(
                TrackNode(
                    node_id=self._new_node_id(),
                    frame_index=frame_index,
                    depth=leaf.depth + 1,
                    detection=det,
                    kinematic=posterior,
                    log_score=leaf.log_score + fused_log_score(fused, active.log_floor),
                    parent=leaf,
                    misses=0,
                    n_obs=leaf.n_obs + 1,
                    cache={},
                    comparator_scores=tuple(scores.values()),
                    fused=fused,
                )
            )
        return children

    def expand_trees(self, frame_index: int, detections: Sequence[Detection]) -> List[int]:
        """Grow every live tree by one frame; returns ids of trees that
        died because every branch exceeded the miss budget."""
        died: List[int] = []
        for tree in self._live_trees():
            new_leaves: List[TrackNode] = []
            for leaf in tree.leaves:
                new_leaves.extend(self._expand_leaf(tree, leaf, frame_index, detections))
            if not new_leaves:
                tree.status = DEAD
                tree.selected_leaf = None
                died.append(tree.tree_id)
            else:
                tree.leaves = new_leaves
        return died

    def _spawn(self, frame_index: int, det: Detection) -> TrackTree:
        root = TrackNode(
            node_id=self._new_node_id(),
            frame_index=frame_index,
            depth=0,
            detection=det,
            kinematic=kf_init(det.box, self.cfg.noise),
            log_score=self.cfg.new_track_log_penalty,
            parent=None,
            misses=0,
            n_obs=1,
            cache={},
        )
        tree = TrackTree(self._next_tree, root)
        self._next_tree += 1
        if self.cfg.confirm_hits <= tree.consec_hits:
            tree.status = CONFIRMED
        self.trees[tree.tree_id] = tree
        return tree

    def _duel(self, a: TrackTree, b: TrackTree) -> TrackTree:
        """Loser of a committed-claim collision: prefer confirmed status,
        then longer observation history, then branch score, then age."""

        def strength(tree: TrackTree) -> Tuple[int, int, float, int]:
            leaf = tree.selected_leaf
            if leaf is None:
                leaf = min(tree.leaves, key=lambda n: (-n.log_score, n.node_id))
            return (
                1 if tree.status == CONFIRMED else 0,
                leaf.n_obs,
                leaf.log_score,
                -tree.tree_id,
            )

        return b if strength(a) >= strength(b) else a

    def _register_commits(self, tree: TrackTree) -> List[int]:
        """Record newly committed claims; resolve duplicate-track overlap.

        Once a claim leaves the revision window it is immutable.  Two
        live trees committed to the same claim describe the same
        observation twice, so the weaker tree dies.
        """
        killed: List[int] = []
        sel = tree.selected_leaf
        if sel is None:
            return killed
        target = sel.depth - self.cfg.nscan
        if target <= tree.committed_upto:
            return killed
        node: Optional[TrackNode] = sel.ancestor_at(target)
        path: List[TrackNode] = []
        while node is not None and node.depth > tree.committed_upto:
            path.append(node)
            node = node.parent
        for item in reversed(path):
            if item.detection is None:
                continue
            key = (item.frame_index, item.detection.detection_id)
            owner_id = self._claims.get(key)
            if owner_id is not None and owner_id != tree.tree_id:
                owner = self.trees.get(owner_id)
                if owner is not None and owner.status != DEAD:
                    loser = self._duel(owner, tree)
                    loser.status = DEAD
                    loser.selected_leaf = None
                    killed.append(loser.tree_id)
                    if loser is tree:
                        return killed
            self._claims[key] = tree.tree_id
        tree.committed_upto = target
        return killed

    def _emission_box(self, leaf: TrackNode) -> BoundingBox:
        if leaf.detection is not None:
            return leaf.detection.box
        return coast_box(leaf.kinematic, leaf.history())

    def process_frame(self, frame_index: int, detections: Sequence[Detection]) -> FrameResult:
        if self._last_frame is not None and frame_index <= self._last_frame:
            raise FrameOrderViolation(
                f"frame {frame_index} after frame {self._last_frame}; frames must increase"
            )
        validate_detections(frame_index, detections)
        self._last_frame = frame_index

        for comp in self._comparators.values():
            comp.begin_frame(frame_index, detections)

        died = self.expand_trees(frame_index, detections)
        live = self._live_trees()

        weights, adjacency, payload = build_conflict_graph(
            live, min_claim_frame=frame_index - self.cfg.nscan
        )
        used_fallback = False
        if len(weights) > self.cfg.max_exact_vertices:
            solution = greedy_mwis(weights, adjacency)
            used_fallback = True
        else:
            solution = solve_mwis(weights, adjacency, self.cfg.max_exact_vertices)
            used_fallback = not solution.exact

        selected: Dict[int, TrackNode] = {}
        total = 0.0
        for v in solution.vertices:
            tree, leaf = payload[v]
            selected[tree.tree_id] = leaf
            total += leaf.log_score
        selections = tuple(
            (tree.tree_id, selected[tree.tree_id].node_id)
            for tree in live
            if tree.tree_id in selected
        )
        hypothesis = GlobalHypothesis(selections=selections, total_log_score=total)

        claimed: Set[int] = set()
        for tree in live:
            leaf = selected.get(tree.tree_id)
            tree.selected_leaf = leaf
            if leaf is not None and leaf.detection is not None:
                claimed.add(leaf.detection.detection_id)
                tree.consec_hits += 1
            else:
                tree.consec_hits = 0
            if tree.status == TENTATIVE and tree.consec_hits >= self.cfg.confirm_hits:
                tree.status = CONFIRMED

        spawned: List[int] = []
        for det in detections:
            if det.detection_id not in claimed:
                spawned.append(self._spawn(frame_index, det).tree_id)

        died = list(died)
        for tree in live:
            if tree.status == DEAD:
                continue
            if tree.selected_leaf is not None:
                nscan_prune(tree, tree.selected_leaf, self.cfg.nscan)
                died.extend(self._register_commits(tree))
            cap_leaves(tree, self.cfg.max_leaves_per_tree)

        assignments: List[Assignment] = []
        for tree in self._live_trees():
            if tree.status != CONFIRMED:
                continue
            leaf = tree.selected_leaf
            if leaf is None:
                # Conflict resolution skipped this tree entirely; coast on
                # its best surviving miss branch (never re-claim a detection).
                candidates = [l for l in tree.leaves if l.detection is None] or tree.leaves
                leaf = min(candidates, key=lambda n: (-n.log_score, n.node_id))
            hit = leaf.detection is not None and tree.selected_leaf is leaf
            assignments.append(
                Assignment(
                    track_id=tree.tree_id,
                    frame_index=frame_index,
                    detection_id=leaf.detection.detection_id if hit else None,
                    box=leaf.detection.box if hit else self._emission_box(leaf),
                    coasted=not hit,
                    fused=leaf.fused if hit else None,
                    comparator_scores=leaf.comparator_scores if hit else (),
                )
            )

        return FrameResult(
            frame_index=frame_index,
            assignments=tuple(assignments),
            hypothesis=hypothesis,
            n_vertices=len(weights),
            used_greedy_fallback=used_fallback,
            spawned=tuple(spawned),
            died=tuple(died),
        )
