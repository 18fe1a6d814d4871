"""Record-to-prediction pipeline: fitted transforms plus a boosted-tree model.

Everything is fitted on training records only; ``transform`` reuses the
fitted vocabularies so serving never refits.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import RepoRecord
from .errors import SchemaMismatch
from .features import (
    CATEGORICAL_SOURCES,
    NUMERICAL_SOURCES,
    TEXT_FIELDS,
    CategoricalEncoder,
    FeatureMatrix,
    SelectionModel,
    TextVectorizer,
    TextVectorizerConfig,
    assemble,
    numerical_matrix,
    select_features,
    smote,
    top_contributors,
)
from .model import GbdtModel, TrainConfig, read_bundle, save_model, train


@dataclass
class PipelineConfig:
    text_fields: tuple[str, ...] = TEXT_FIELDS
    categorical_sources: tuple[str, ...] = CATEGORICAL_SOURCES
    numerical_sources: tuple[str, ...] = NUMERICAL_SOURCES
    text: TextVectorizerConfig = field(default_factory=TextVectorizerConfig)
    top_k_contributors: int = 50
    select: bool = True
    selection_C: float = 0.01
    smote: bool = False
    smote_k: int = 5
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        self.text_fields = tuple(self.text_fields)
        self.categorical_sources = tuple(self.categorical_sources)
        self.numerical_sources = tuple(self.numerical_sources)
        if not (self.text_fields or self.categorical_sources or self.numerical_sources):
            raise ValueError("pipeline has no feature sources")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["text_fields"] = list(self.text_fields)
        d["categorical_sources"] = list(self.categorical_sources)
        d["numerical_sources"] = list(self.numerical_sources)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        d["text"] = TextVectorizerConfig(**d["text"])
        d["train"] = TrainConfig(**d["train"])
        return cls(**d)


# The five source configurations compared in the data-source ablation.
ABLATIONS: dict[str, dict] = {
    "Description only": dict(text_fields=("description",), categorical_sources=(), numerical_sources=()),
    "README only": dict(text_fields=("readme",), categorical_sources=(), numerical_sources=()),
    "Textual data only": dict(categorical_sources=(), numerical_sources=()),
    "Textual and categorical data": dict(numerical_sources=()),
    "Textual, categorical and numerical data": dict(),
}


def ablation_config(base: PipelineConfig, name: str) -> PipelineConfig:
    return replace(base, **ABLATIONS[name])


class FeaturePipeline:
    def __init__(self, config: PipelineConfig):
        self.config = config
        self.text: TextVectorizer | None = None
        self.categorical: CategoricalEncoder | None = None
        self.selector: SelectionModel | None = None

    def _raw_matrix(self, records: Sequence[RepoRecord]) -> FeatureMatrix:
        cfg = self.config
        text = self.text.transform(records) if self.text is not None else None
        cat = self.categorical.transform(records) if self.categorical is not None else None
        num = numerical_matrix(records, cfg.numerical_sources) if cfg.numerical_sources else None
        return assemble(text, cat, num)

    def fit(self, records: Sequence[RepoRecord]) -> FeatureMatrix:
        """Fit all transforms on labelled records and return their (selected) matrix."""
        cfg = self.config
        labels = [r.label for r in records]
        if any(l is None for l in labels):
            raise ValueError("pipeline fitting needs labelled records")
        self.text = TextVectorizer(cfg.text, cfg.text_fields).fit(records) if cfg.text_fields else None
        if cfg.categorical_sources:
            whitelist = top_contributors(records, cfg.top_k_contributors)
            self.categorical = CategoricalEncoder(cfg.categorical_sources, whitelist).fit(records)
        else:
            self.categorical = None
        matrix = self._raw_matrix(records)
        matrix.labels = labels
        if cfg.select and matrix.group_indices("categorical") and len(set(labels)) > 1:
            self.selector = select_features(matrix, cfg.selection_C, seed=cfg.seed)
            matrix = self.selector.transform(matrix)
        else:
            self.selector = None
        return matrix

    def transform(self, records: Sequence[RepoRecord]) -> FeatureMatrix:
        matrix = self._raw_matrix(records)
        if self.selector is not None:
            matrix = self.selector.transform(matrix)
        if all(r.label is not None for r in records):
            matrix.labels = [r.label for r in records]
        return matrix

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "text": None if self.text is None else self.text.to_dict(),
            "categorical": None if self.categorical is None else self.categorical.to_dict(),
            "selector": None if self.selector is None else self.selector.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeaturePipeline":
        fp = cls(PipelineConfig.from_dict(d["config"]))
        fp.text = None if d["text"] is None else TextVectorizer.from_dict(d["text"])
        fp.categorical = None if d["categorical"] is None else CategoricalEncoder.from_dict(d["categorical"])
        fp.selector = None if d["selector"] is None else SelectionModel.from_dict(d["selector"])
        return fp


class Classifier:
    """Fitted features + model; the unit that cross-validation and the CLI handle."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.features = FeaturePipeline(config)
        self.model: GbdtModel | None = None
        self.provenance: dict = {}

    def fit(self, records: Sequence[RepoRecord], train_config: TrainConfig | None = None) -> "Classifier":
        matrix = self.features.fit(records)
        if self.config.smote:
            matrix = smote(matrix, self.config.smote_k, self.config.seed)
        self.model = train(matrix, train_config or self.config.train)
        return self

    @property
    def classes(self) -> list[str]:
        return self.model.classes

    def predict_proba(self, records: Sequence[RepoRecord]) -> np.ndarray:
        matrix = self.features.transform(records)
        if [c.name for c in matrix.columns] != [c.name for c in self.model.columns]:
            raise SchemaMismatch("feature columns differ from the ones the model was trained on")
        return self.model.predict_proba(matrix.rows)

    def predict(self, records: Sequence[RepoRecord]) -> list[str]:
        proba = self.predict_proba(records)
        return [self.model.classes[i] for i in np.argmax(proba, axis=1)]

    def save(self, path: str | Path, provenance: dict | None = None) -> None:
        save_model(self.model, path, pipeline=self.features.to_dict(), provenance=provenance)

    @classmethod
    def load(cls, path: str | Path) -> "Classifier":
        payload = read_bundle(path)
        if payload.get("pipeline") is None:
            raise ValueError(f"{path} holds a bare model without a feature pipeline")
        features = FeaturePipeline.from_dict(payload["pipeline"])
        clf = cls(features.config)
        clf.features = features
        clf.model = GbdtModel.from_dict(payload["model"])
        clf.provenance = payload.get("provenance", {})
        return clf
