"""The five pretraining recipes, at desk scale and at the published scale.

Presets differ only in which data they bind and how tasks are mixed; model
shape and optimiser settings are shared within a scale so runs compare
cleanly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .model import FULL_CONFIG, ModelConfig
from .noising import NoiseConfig
from .trainer import TaskMixture, TaskSpec, TrainConfig

OTHER = ("af", "ln", "sw", "zu")
ALL_PAIRS = tuple(("en", x) for x in OTHER)
# English monolingual share: 10MB and 112MB samples, relative to the larger size
EXP3_ENGLISH_RATIO = 10 / 112


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    mono: tuple                 # languages used for denoising
    pairs: tuple                # (src, tgt) pairs used for translation
    english_ratio: float = 0.0  # English mono sample size / largest other mono source
    data_kind: str = "Monolingual"
    note: str = ""

    @property
    def languages(self) -> tuple:
        langs = set(self.mono)
        for a, b in self.pairs:
            langs.update((a, b))
        if self.english_ratio > 0:
            langs.add("en")
        return tuple(sorted(langs))

    @property
    def includes_lingala(self) -> bool:
        return "ln" in self.languages

    def mixture(self, directions: str = "both") -> TaskMixture:
        tasks = []
        mono = tuple(self.mono) + (("en",) if self.english_ratio > 0 and "en" not in self.mono else ())
        if mono:
            tasks.append(TaskSpec("denoise", mono, 1.0))
        if self.pairs:
            names = tuple(f"{a}-{b}" for a, b in self.pairs)
            if directions == "both":
                names += tuple(f"{b}-{a}" for a, b in self.pairs)
            tasks.append(TaskSpec("translate", names, 1.0))
        return TaskMixture(tuple(tasks))


PRESETS = {
    "exp1": ExperimentPreset("exp1", ("ln",), (), 0.0, "Monolingual",
                             "denoising on Lingala monolingual data only"),
    "exp2": ExperimentPreset("exp2", OTHER, ALL_PAIRS, 0.0, "Monolingual & Parallel",
                             "Af/Ln/Sw/Zu denoising plus all En-XX translation"),
    "exp3": ExperimentPreset("exp3", OTHER, ALL_PAIRS, EXP3_ENGLISH_RATIO, "Monolingual & Parallel",
                             "exp2 plus a small random English monolingual sample"),
    "exp3plus": ExperimentPreset("exp3plus", OTHER, ALL_PAIRS, 1.0, "Monolingual & Parallel",
                                 "exp3 with the English sample enlarged"),
    "exp4": ExperimentPreset("exp4", ("en", "ln"), (("en", "ln"),), 0.0, "Monolingual & Parallel",
                             "English and Lingala data only"),
}


@dataclass(frozen=True)
class Scale:
    model: ModelConfig
    pretrain: TrainConfig
    finetune: TrainConfig
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    vocab_size: int = 1000


DESK = Scale(
    model=ModelConfig(vocab_size=1000, d_model=64, d_ff=256, encoder_layers=2, decoder_layers=2,
                      heads=4, max_len=128, dropout=0.1),
    pretrain=TrainConfig(max_steps=300, batch_sentences=16, lr_max=2e-3, warmup_steps=100,
                         eval_every=50, dtype="float32"),
    finetune=TrainConfig(max_steps=300, batch_sentences=16, lr_max=2e-3, warmup_steps=50,
                         eval_every=50, dtype="float32", directions="forward"),
    vocab_size=1000,
)

FULL = Scale(
    model=FULL_CONFIG,
    pretrain=TrainConfig(max_steps=100_000, batch_sentences=1024, lr_max=5e-4, warmup_steps=4000,
                         eval_every=1000),
    finetune=TrainConfig(max_steps=100_000, batch_sentences=1024, lr_max=5e-4, warmup_steps=4000,
                         eval_every=1000, directions="forward"),
    vocab_size=80_000,
)

SCALES = {"desk": DESK, "full": FULL}


def resolve(name: str):
    """``exp2-desk`` -> (preset, scale); a bare name means desk scale."""
    base, _, scale = name.partition("-")
    scale = scale or "desk"
    if base not in PRESETS or scale not in SCALES:
        known = ", ".join(f"{p}-{s}" for p in PRESETS for s in SCALES)
        raise KeyError(f"unknown preset {name!r} (known: {known})")
    return PRESETS[base], SCALES[scale]
