"""Class vocabulary and the labeled in-memory dataset shared by all classifiers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from netprofile.preprocess import DEFAULT_DELAY_CAP, DEFAULT_SIZE_CAP, featurize_many

APPS: Tuple[str, ...] = ("facebook", "youtube", "whatsapp", "gmail", "impertinent")
ACTIVITIES: Dict[str, Tuple[str, ...]] = {
    "facebook": ("post_text", "post_image"),
    "youtube": ("play_video", "comment"),
    "whatsapp": ("send_message", "send_image"),
    "gmail": ("mail",),
    "impertinent": (),
}
# only apps with at least two actions get an activity classifier
ROUTED_APPS: Tuple[str, ...] = tuple(a for a in APPS if len(ACTIVITIES[a]) >= 2)


def event_name(app: str, activity: Optional[str]) -> str:
    return app if not activity else f"{app}/{activity}"


@dataclass
class LabeledSet:
    pooled: np.ndarray  # (N, 128, 6)
    stats: np.ndarray  # (N, 15)
    app: np.ndarray  # (N,) index into APPS
    act: np.ndarray  # (N,) index into ACTIVITIES[app], -1 when the app has none
    keys: List[str]

    def __len__(self) -> int:
        return len(self.app)

    def subset(self, idx: Sequence[int]) -> "LabeledSet":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledSet(self.pooled[idx], self.stats[idx], self.app[idx], self.act[idx], [self.keys[i] for i in idx])

    def of_app(self, app: str) -> np.ndarray:
        return np.flatnonzero(self.app == APPS.index(app))


def label_indices(app_label: Optional[str], activity_label: Optional[str]) -> Tuple[int, int]:
    app = APPS.index(app_label)
    acts = ACTIVITIES[app_label]
    return app, (acts.index(activity_label) if activity_label in acts else -1)


def from_streams(
    streams: Iterable, size_cap: int = DEFAULT_SIZE_CAP, delay_cap: float = DEFAULT_DELAY_CAP
) -> LabeledSet:
    """Featurize labeled streams; unlabeled, foreign and DNS streams are dropped."""
    from netprofile.baselines.stats import compute_stats, stats_to_features

    kept = [s for s in streams if s.app_label in APPS and s.tag is None and s.packets]
    apps, acts = zip(*(label_indices(s.app_label, s.activity_label) for s in kept)) if kept else ((), ())
    stats = np.array([stats_to_features(compute_stats(s)) for s in kept]).reshape(len(kept), 15)
    return LabeledSet(
        pooled=featurize_many(kept, size_cap, delay_cap),
        stats=stats,
        app=np.asarray(apps, dtype=np.int64),
        act=np.asarray(acts, dtype=np.int64),
        keys=[str(s.key) for s in kept],
    )


def split_indices(n: int, rng: np.random.Generator, test_fraction: float = 0.2) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle into (train, test) index arrays, both sorted."""
    perm = rng.permutation(n)
    n_test = int(round(n * test_fraction))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])
