"""Directed dialog graphs with similarity-normalized edge weights and role-pair edge types."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .corpus import Dialog, Role
from .errors import ShapeError, ValidationError

WEIGHT_EPS = 1e-12


class EdgeType(str, enum.Enum):
    R2R = "R2R"
    R2D = "R2D"
    D2R = "D2R"
    D2D = "D2D"


EDGE_TYPES = (EdgeType.R2R, EdgeType.R2D, EdgeType.D2R, EdgeType.D2D)
EDGE_TYPE_INDEX = {t: i for i, t in enumerate(EDGE_TYPES)}


def assign_edge_types(role_i: Role, role_j: Role) -> EdgeType:
    """Type of an edge from a ``role_i`` vertex to a ``role_j`` vertex."""
    src = "R" if role_i == Role.REPORTER else "D"
    dst = "R" if role_j == Role.REPORTER else "D"
    return EdgeType(f"{src}2{dst}")


@dataclass
class DialogGraph:
    """Vertices follow dialog order; ``edges[e] = (i, j)`` means vertex ``i``
    replies to vertex ``j``."""

    ids: list
    vectors: np.ndarray
    edges: np.ndarray
    weights: np.ndarray
    types: list
    roles: list

    @property
    def n_vertices(self) -> int:
        return len(self.ids)

    @property
    def src(self) -> np.ndarray:
        return self.edges[:, 0]

    @property
    def dst(self) -> np.ndarray:
        return self.edges[:, 1]

    def type_index(self) -> np.ndarray:
        return np.array([EDGE_TYPE_INDEX[t] for t in self.types], dtype=np.int64)

    def to_json(self) -> str:
        return json.dumps({
            "vertices": [{"id": i, "role": r.value, "vector": v.tolist()}
                         for i, r, v in zip(self.ids, self.roles, self.vectors)],
            "edges": self.edges.tolist(),
            "weights": {f"{a},{b}": float(w) for (a, b), w in zip(self.edges.tolist(), self.weights)},
            "types": {f"{a},{b}": t.value for (a, b), t in zip(self.edges.tolist(), self.types)},
        })

    @classmethod
    def from_json(cls, text: str) -> "DialogGraph":
        data = json.loads(text)
        verts = data["vertices"]
        edges = np.array(data["edges"], dtype=np.int64).reshape(-1, 2)
        keys = [f"{a},{b}" for a, b in edges.tolist()]
        return cls(
            ids=[v["id"] for v in verts],
            vectors=np.array([v["vector"] for v in verts], dtype=np.float64).reshape(len(verts), -1),
            edges=edges,
            weights=np.array([data["weights"][k] for k in keys], dtype=np.float64),
            types=[EdgeType(data["types"][k]) for k in keys],
            roles=[Role(v["role"]) for v in verts],
        )


def bilinear_scores(vectors: np.ndarray, edges: np.ndarray, W_e: np.ndarray) -> np.ndarray:
    """``u_i^T W_e u_j`` for every edge ``(i, j)``."""
    if edges.size == 0:
        return np.zeros(0)
    return np.einsum("ed,df,ef->e", vectors[edges[:, 0]], W_e, vectors[edges[:, 1]])


def compute_edge_weights(vectors: np.ndarray, edges: np.ndarray, W_e: np.ndarray,
                         return_fallback: bool = False):
    """Edge weights normalized over each source vertex's out-edges.

    Raw bilinear scores are clipped at zero before normalizing so weights
    stay in ``[0, 1]``; a source whose clipped scores sum to at most 1e-12
    gets uniform weights over its out-edges.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    W_e = np.asarray(W_e, dtype=np.float64)
    d = vectors.shape[1]
    if W_e.shape != (d, d):
        raise ShapeError(f"W_e must be {d}x{d}, got {W_e.shape}")
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    raw = bilinear_scores(vectors, edges, W_e)
    weights, fallback = kernels.normalize_by_source(edges[:, 0], raw, len(vectors), WEIGHT_EPS)
    return (weights, fallback) if return_fallback else weights


def build_graph(d: Dialog, vecs: dict, W_e: np.ndarray) -> DialogGraph:
    """Graph of one dialog; a single-utterance dialog gets a weight-1 self-loop."""
    missing = [u.id for u in d.utterances if u.id not in vecs]
    if missing:
        raise ValidationError(f"no utterance vector for {missing[0]}")
    ids = [u.id for u in d.utterances]
    roles = [u.role for u in d.utterances]
    vectors = np.array([np.asarray(vecs[i], dtype=np.float64) for i in ids])
    pos = {u: k for k, u in enumerate(ids)}
    if len(ids) == 1 and not d.reply_links:
        edges = np.array([[0, 0]], dtype=np.int64)
    else:
        edges = np.array([[pos[a], pos[b]] for a, b in d.reply_links], dtype=np.int64).reshape(-1, 2)
    types = [assign_edge_types(roles[i], roles[j]) for i, j in edges.tolist()]
    weights = compute_edge_weights(vectors, edges, W_e)
    return DialogGraph(ids=ids, vectors=vectors, edges=edges, weights=weights, types=types, roles=roles)
