"""Training loop: paired-WAV ingestion, AdamW, periodic validation, bit-exact
checkpoint/resume, and the comparison harnesses behind the curve plots.

Determinism contract: given (seed, config, dataset), single-threaded runs
produce identical loss sequences, and a resumed run continues the exact
sequence of an uninterrupted one.  Everything stochastic flows through one
PCG64 stream whose state rides along in checkpoints.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward
from .checkpoint import load_checkpoint, save_checkpoint
from .dsp import AudioClip, StftConfig, consistency_project, istft_pair, stft_pair
from .errors import ConfigError, DataError, NumericalError
from .losses import (Discriminator, LossWeights, discriminator_loss,
                     generator_loss, mag_consistency_loss, mag_mse,
                     metric_loss, proxy_quality)
from .model import ModelConfig, build_model
from .params import ParamStore

CURVE_COLUMNS = ("step", "l_mag_consis", "l_metric", "l_disc", "val_mag_error", "val_quality")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 2
    max_steps: int = 20000
    lr: float = 5e-4
    beta1: float = 0.8
    beta2: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 0.01
    eval_every: int = 500
    checkpoint_every: int = 1000
    seed: int = 0
    lambda1: float = 1.0
    lambda2: float = 0.0
    segment_samples: int = 32000
    use_consistency: bool = True
    valid_fraction: float = 0.1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps}")
        for b in (self.beta1, self.beta2):
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"betas must lie in [0, 1), got {b}")
        if self.eval_every < 1 or self.checkpoint_every < 1:
            raise ConfigError("eval_every and checkpoint_every must be >= 1")
        if self.segment_samples < 1:
            raise ConfigError("segment_samples must be positive")
        if not 0.0 <= self.valid_fraction < 1.0:
            raise ConfigError(f"valid_fraction must be in [0, 1), got {self.valid_fraction}")
        LossWeights(self.lambda1, self.lambda2)  # not-both-zero check

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2)


class AdamW:
    """Decoupled weight decay, bias-corrected moments.  Parameters with no
    gradient this step still decay, matching the usual whole-group update."""

    def __init__(self, store: ParamStore, lr=5e-4, betas=(0.8, 0.99), eps=1e-8,
                 weight_decay=0.01):
        self.store = store
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in store.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in store.items()}

    def step(self):
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.store.items():
            g = p.grad if p.grad is not None else 0.0
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = p.data - self.lr * (update + self.weight_decay * p.data)

    def state_arrays(self, prefix: str) -> dict:
        out = {}
        for k in self.store.names():
            out[f"{prefix}m/{k}"] = self.m[k]
            out[f"{prefix}v/{k}"] = self.v[k]
        return out

    def load_state(self, arrays: dict, prefix: str, t: int):
        for k in self.store.names():
            self.m[k] = np.array(arrays[f"{prefix}m/{k}"], dtype=np.float64)
            self.v[k] = np.array(arrays[f"{prefix}v/{k}"], dtype=np.float64)
        self.t = int(t)


def adamw_step(opt: AdamW):
    opt.step()


@dataclass
class DatasetSpec:
    clean_dir: str
    noisy_dir: str
    seed: int = 0
    valid_fraction: float = 0.1


class PairedDataset:
    """Same-named WAV pairs under clean_dir / noisy_dir, split by seed."""

    def __init__(self, spec: DatasetSpec):
        self.spec = spec
        clean_dir = Path(spec.clean_dir)
        noisy_dir = Path(spec.noisy_dir)
        names = sorted(p.name for p in clean_dir.glob("*.wav"))
        if not names:
            raise DataError(f"no .wav files in {clean_dir}")
        missing = [n for n in names if not (noisy_dir / n).exists()]
        if missing:
            raise DataError(f"noisy counterparts missing for: {missing[:5]}")
        self.clean_dir = clean_dir
        self.noisy_dir = noisy_dir
        order = list(names)
        np.random.default_rng(spec.seed).shuffle(order)
        if len(order) == 1:
            self.train_names = self.valid_names = list(order)
        else:
            n_valid = max(1, int(round(spec.valid_fraction * len(order)))) if spec.valid_fraction > 0 else 0
            n_valid = min(n_valid, len(order) - 1)
            self.valid_names = sorted(order[:n_valid])
            self.train_names = sorted(order[n_valid:])
        self._cache: dict = {}

    def load(self, name: str):
        hit = self._cache.get(name)
        if hit is None:
            from .wavio import wav_read
            c = wav_read(self.clean_dir / name)
            n = wav_read(self.noisy_dir / name)
            if len(c) != len(n):
                raise DataError(f"{name}: clean has {len(c)} samples, noisy {len(n)}")
            hit = (c, n)
            self._cache[name] = hit
        return hit


@dataclass
class Batch:
    noisy_mag: Tensor
    noisy_phase: Tensor
    clean_mag: Tensor
    clean: np.ndarray
    noisy: np.ndarray
    ids: list = field(default_factory=list)


def _paired_segment(c: np.ndarray, n: np.ndarray, seg: int, rng):
    length = c.shape[0]
    if length > seg:
        off = int(rng.integers(0, length - seg + 1)) if rng is not None else 0
        return c[off:off + seg], n[off:off + seg], off
    if length < seg:
        padw = (0, seg - length)
        return np.pad(c, padw), np.pad(n, padw), 0
    return c, n, 0


def make_batch(ds: PairedDataset, rng, batch_size: int, seg: int,
               stft_cfg: StftConfig, names=None) -> Batch:
    pool = names if names is not None else ds.train_names
    cs, ns, ids = [], [], []
    for _ in range(batch_size):
        name = pool[int(rng.integers(len(pool)))]
        cclip, nclip = ds.load(name)
        c, n, off = _paired_segment(cclip.samples, nclip.samples, seg, rng)
        cs.append(c)
        ns.append(n)
        ids.append(f"{name}@{off}")
    clean = np.stack(cs)
    noisy = np.stack(ns)
    nspec_re, nspec_im = stft_pair(Tensor(noisy), stft_cfg)
    cspec_re, cspec_im = stft_pair(Tensor(clean), stft_cfg)
    from .dsp import wrap_phase
    return Batch(
        noisy_mag=Tensor(np.hypot(nspec_re.data, nspec_im.data)),
        noisy_phase=Tensor(wrap_phase(np.arctan2(nspec_im.data, nspec_re.data))),
        clean_mag=Tensor(np.hypot(cspec_re.data, cspec_im.data)),
        clean=clean,
        noisy=noisy,
        ids=ids,
    )


def config_echo(model_cfg: ModelConfig, stft_cfg: StftConfig, train_cfg: TrainConfig) -> dict:
    echo = {
        "dense_channel": model_cfg.dense_channel, "depth": model_cfg.depth,
        "lke_kernel": model_cfg.lke_kernel, "lsg_kernel": model_cfg.lsg_kernel,
        "mask_beta": model_cfg.mask_beta, "variant": model_cfg.variant,
        "classic_channel": model_cfg.classic_channel,
        "adjust_depthwise": model_cfg.adjust_depthwise,
        "drop": list(model_cfg.drop),
        "n_fft": stft_cfg.n_fft, "win_length": stft_cfg.win_length,
        "hop": stft_cfg.hop, "sample_rate": stft_cfg.sample_rate,
        "compression": stft_cfg.compression,
    }
    for k in ("batch_size", "max_steps", "lr", "beta1", "beta2", "eps", "weight_decay",
              "eval_every", "checkpoint_every", "seed", "lambda1", "lambda2",
              "segment_samples", "use_consistency", "valid_fraction"):
        echo[k] = getattr(train_cfg, k)
    return echo


def configs_from_echo(echo: dict):
    model_cfg = ModelConfig(
        dense_channel=int(echo["dense_channel"]), depth=int(echo["depth"]),
        lke_kernel=int(echo["lke_kernel"]), lsg_kernel=int(echo["lsg_kernel"]),
        mask_beta=float(echo["mask_beta"]), variant=echo["variant"],
        classic_channel=int(echo["classic_channel"]),
        adjust_depthwise=bool(echo["adjust_depthwise"]),
        drop=tuple(echo.get("drop", ())),
    )
    stft_cfg = StftConfig(
        n_fft=int(echo["n_fft"]), win_length=int(echo["win_length"]),
        hop=int(echo["hop"]), sample_rate=int(echo["sample_rate"]),
        compression=float(echo.get("compression", 1.0)),
    )
    return model_cfg, stft_cfg


@dataclass
class TrainResult:
    curves_path: str
    checkpoints: list
    losses: list
    final_val: dict
    model: object


def _estimate_waveforms(est_mag_data: np.ndarray, phase: np.ndarray,
                        stft_cfg: StftConfig, out_len: int) -> np.ndarray:
    re = Tensor(est_mag_data * np.cos(phase))
    im = Tensor(est_mag_data * np.sin(phase))
    return istft_pair(re, im, stft_cfg, out_len).data


def _validate(model, items, stft_cfg, seg, oracle):
    errs, quals = [], []
    for clean_seg, noisy_seg in items:
        nre, nim = stft_pair(Tensor(noisy_seg[None, :]), stft_cfg)
        cre, cim = stft_pair(Tensor(clean_seg[None, :]), stft_cfg)
        nmag = np.hypot(nre.data, nim.data)
        phase = np.arctan2(nim.data, nre.data)
        cmag = np.hypot(cre.data, cim.data)
        _, enh = model.forward(Tensor(nmag))
        errs.append(float(np.mean((cmag - enh.data) ** 2)))
        est = _estimate_waveforms(enh.data, phase, stft_cfg, seg)[0]
        quals.append(float(oracle(AudioClip(clean_seg), AudioClip(est))))
    return float(np.mean(errs)), float(np.mean(quals))


def train(model_cfg: ModelConfig, stft_cfg: StftConfig, train_cfg: TrainConfig,
          dataset: PairedDataset, out_dir, oracle=None, resume=None,
          log=None) -> TrainResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seg = train_cfg.segment_samples
    if seg < stft_cfg.win_length:
        raise ConfigError(f"segment_samples {seg} shorter than one window {stft_cfg.win_length}")
    oracle = oracle if oracle is not None else proxy_quality
    weights = train_cfg.weights

    model = build_model(model_cfg, stft_cfg, seed=train_cfg.seed)
    opt = AdamW(model.store, lr=train_cfg.lr, betas=(train_cfg.beta1, train_cfg.beta2),
                eps=train_cfg.eps, weight_decay=train_cfg.weight_decay)
    disc = disc_opt = None
    if weights.lambda2 > 0:
        disc = Discriminator(seed=train_cfg.seed + 1)
        disc_opt = AdamW(disc.store, lr=train_cfg.lr, betas=(train_cfg.beta1, train_cfg.beta2),
                         eps=train_cfg.eps, weight_decay=train_cfg.weight_decay)

    rng = np.random.default_rng(train_cfg.seed)
    start_step = 0
    best_val = None
    echo = config_echo(model_cfg, stft_cfg, train_cfg)

    if resume is not None:
        arrays, saved_echo, extra = load_checkpoint(resume)
        for key in ("dense_channel", "depth", "variant", "n_fft", "hop", "drop",
                    "classic_channel", "lke_kernel", "lsg_kernel"):
            if saved_echo.get(key) != echo.get(key):
                raise ConfigError(
                    f"checkpoint was trained with {key}={saved_echo.get(key)!r}, "
                    f"current config has {echo.get(key)!r}")
        model.store.load_state({k[2:]: v for k, v in arrays.items() if k.startswith("p/")})
        opt.load_state(arrays, "", extra["opt_t"])
        if disc is not None and any(k.startswith("dp/") for k in arrays):
            disc.store.load_state({k[3:]: v for k, v in arrays.items() if k.startswith("dp/")})
            disc_opt.load_state(arrays, "d", extra.get("disc_opt_t", 0))
        rng.bit_generator.state = extra["rng_state"]
        start_step = int(extra["step"])
        best_val = extra.get("best_val")

    valid_items = []
    for name in dataset.valid_names[:4]:
        cclip, nclip = dataset.load(name)
        c, n, _ = _paired_segment(cclip.samples, nclip.samples, seg, rng=None)
        valid_items.append((c, n))

    curves_path = out_dir / "curves.csv"
    mode = "a" if (resume is not None and curves_path.exists()) else "w"
    curves = open(curves_path, mode)
    if mode == "w":
        curves.write("# val_quality: built-in proxy oracle (not PESQ)\n")
        curves.write(",".join(CURVE_COLUMNS) + "\n")

    losses = []
    checkpoints = []
    final_val = {}

    def save(step):
        arrays = {f"p/{k}": p.data for k, p in model.store.items()}
        arrays.update(opt.state_arrays(""))
        extra = {"step": step, "opt_t": opt.t, "rng_state": rng.bit_generator.state,
                 "best_val": best_val}
        if disc is not None:
            arrays.update({f"dp/{k}": p.data for k, p in disc.store.items()})
            arrays.update(disc_opt.state_arrays("d"))
            extra["disc_opt_t"] = disc_opt.t
        path = out_dir / f"ckpt_step{step}.dtsn"
        save_checkpoint(path, arrays, echo, extra)
        checkpoints.append(str(path))
        return path

    try:
        for step in range(start_step + 1, train_cfg.max_steps + 1):
            batch = make_batch(dataset, rng, train_cfg.batch_size, seg, stft_cfg)
            model.store.zero_grad()
            _, enh = model.forward(batch.noisy_mag)

            if train_cfg.use_consistency:
                x_out = consistency_project(enh, batch.noisy_phase, stft_cfg, seg)
                l_mag = mag_mse(batch.clean_mag, x_out)
            else:
                x_out = enh
                l_mag = mag_mse(batch.clean_mag, enh)

            l_metric = None
            l_disc_val = 0.0
            if disc is not None:
                est_wavs = _estimate_waveforms(enh.data, batch.noisy_phase.data, stft_cfg, seg)
                q = [oracle(AudioClip(batch.clean[i]), AudioClip(est_wavs[i]))
                     for i in range(train_cfg.batch_size)]
                x_det = Tensor(x_out.data.copy())
                disc.store.zero_grad()
                l_d = discriminator_loss(disc, batch.clean_mag, x_det, q)
                if not np.isfinite(l_d.data):
                    _dump_abort(out_dir, step, batch, "discriminator loss")
                backward(l_d)
                disc_opt.step()
                l_disc_val = float(l_d.data)
                disc.store.zero_grad()
                l_metric = metric_loss(disc, batch.clean_mag, x_out)

            l_g = generator_loss(weights, l_mag, l_metric)
            if not np.isfinite(l_g.data):
                _dump_abort(out_dir, step, batch, "generator loss")
            backward(l_g)
            opt.step()
            if disc is not None:
                disc.store.zero_grad()  # generator backward leaks grads into D

            l_mag_val = float(l_mag.data)
            l_metric_val = float(l_metric.data) if l_metric is not None else 0.0
            losses.append(l_mag_val)

            val_err = val_q = ""
            if step % train_cfg.eval_every == 0 or step == train_cfg.max_steps:
                ve, vq = _validate(model, valid_items, stft_cfg, seg, oracle)
                val_err = f"{ve:.10g}"
                val_q = f"{vq:.10g}"
                if best_val is None or ve < best_val:
                    best_val = ve
                final_val = {"val_mag_error": ve, "val_quality": vq}
                if log:
                    log(f"step {step}: l_mag {l_mag_val:.6f} val_err {ve:.6f} val_q {vq:.4f}")

            curves.write(f"{step},{l_mag_val:.10g},{l_metric_val:.10g},{l_disc_val:.10g},"
                         f"{val_err},{val_q}\n")

            if step % train_cfg.checkpoint_every == 0 or step == train_cfg.max_steps:
                save(step)
    finally:
        curves.close()

    return TrainResult(curves_path=str(curves_path), checkpoints=checkpoints,
                       losses=losses, final_val=final_val, model=model)


def _dump_abort(out_dir, step, batch, what):
    dump = {"step": step, "batch_ids": batch.ids, "failed": what}
    path = Path(out_dir) / "abort_dump.json"
    path.write_text(json.dumps(dump, indent=2))
    raise NumericalError(f"non-finite {what} at step {step}; offending batch {batch.ids} "
                         f"(details in {path})")


# ---------------------------------------------------------------------------
# synthetic paired data
# ---------------------------------------------------------------------------

def synth_dataset(n_pairs: int, seed: int, out_dir, duration_s: float = 3.0,
                  snr_range=(0.0, 15.0)) -> dict:
    """Paired harmonic-tone clips: clean plus tilt-shaped noise at a requested
    SNR drawn from snr_range.  Deterministic per (n_pairs, seed)."""
    from .wavio import wav_write
    out_dir = Path(out_dir)
    (out_dir / "clean").mkdir(parents=True, exist_ok=True)
    (out_dir / "noisy").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    sr = 16000
    n = int(duration_s * sr)
    t = np.arange(n) / sr
    rows = []
    for i in range(n_pairs):
        f0 = float(rng.uniform(90.0, 280.0))
        sig = np.zeros(n)
        for k in range(1, 6):
            amp = rng.uniform(0.4, 1.0) / k
            sig += amp * np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi))
        am = 0.55 + 0.45 * np.sin(2 * np.pi * rng.uniform(1.5, 4.0) * t + rng.uniform(0, 2 * np.pi))
        sig *= am
        ramp = min(n, sr // 10)
        sig[:ramp] *= np.linspace(0.0, 1.0, ramp)
        sig *= 0.35 / np.max(np.abs(sig))

        white = rng.normal(size=n)
        spec = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n, 1.0 / sr)
        fc = rng.uniform(500.0, 4000.0)
        spec *= 1.0 / (1.0 + freqs / fc)
        noise = np.fft.irfft(spec, n=n)

        snr_db = float(rng.uniform(*snr_range))
        target = 10.0 ** (snr_db / 10.0)
        scale = np.sqrt((sig @ sig) / ((noise @ noise) * target))
        noisy = sig + scale * noise
        peak = max(np.max(np.abs(noisy)), np.max(np.abs(sig)))
        if peak > 0.999:   # joint rescale keeps the SNR untouched
            sig = sig * (0.999 / peak)
            noisy = noisy * (0.999 / peak)
        name = f"utt{i:03d}.wav"
        wav_write(out_dir / "clean" / name, sig)
        wav_write(out_dir / "noisy" / name, noisy)
        rows.append((name, snr_db, f0))
    with open(out_dir / "manifest.csv", "w") as f:
        f.write("name,snr_db,f0_hz\n")
        for name, snr_db, f0 in rows:
            f.write(f"{name},{snr_db:.6f},{f0:.3f}\n")
    return {"dir": str(out_dir), "pairs": n_pairs, "manifest": str(out_dir / "manifest.csv")}


# ---------------------------------------------------------------------------
# comparison harnesses
# ---------------------------------------------------------------------------

def compare_variants(dataset: PairedDataset, stft_cfg: StftConfig,
                     train_cfg: TrainConfig, out_dir, oracle=None) -> dict:
    """Train both variants under one config; write a side-by-side summary."""
    out_dir = Path(out_dir)
    results = {}
    for variant, kw in (("dense_ts", {"dense_channel": 4}),
                        ("classic_ts", {"classic_channel": 6})):
        cfg = ModelConfig(variant=variant, **kw)
        results[variant] = train(cfg, stft_cfg, train_cfg, dataset,
                                 out_dir / variant, oracle=oracle)
    lines = ["variant,final_val_mag_error,final_val_quality,params"]
    for variant, res in results.items():
        lines.append(f"{variant},{res.final_val.get('val_mag_error', '')},"
                     f"{res.final_val.get('val_quality', '')},{res.model.count_params()}")
    d = results["dense_ts"].final_val
    c = results["classic_ts"].final_val
    if d and c:
        ahead = "dense_ts" if d["val_mag_error"] <= c["val_mag_error"] else "classic_ts"
        lines.append(f"# at the final step, {ahead} had the lower validation magnitude error"
                     " (qualitative observation, not an assertion)")
    (out_dir / "comparison.csv").write_text("\n".join(lines) + "\n")
    return results


def loss_study(dataset: PairedDataset, stft_cfg: StftConfig, train_cfg: TrainConfig,
               out_dir, p_values=(0.0, 1.0, 200.0), oracle=None) -> dict:
    """Sweep the metric-loss weight ratio P = lambda2/lambda1 and report the
    spectral errors of each trained model on the validation items."""
    from .evaluation import spectral_errors
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = {}
    rows = ["p,error_mag,error_pha,error_com,final_l_mag"]
    for p in p_values:
        cfg = replace(train_cfg, lambda1=1.0, lambda2=float(p))
        res = train(ModelConfig(), stft_cfg, cfg, dataset, out_dir / f"p{p:g}", oracle=oracle)
        model = res.model
        seg = cfg.segment_samples
        errs = []
        for name in dataset.valid_names[:4]:
            cclip, nclip = dataset.load(name)
            c, n, _ = _paired_segment(cclip.samples, nclip.samples, seg, rng=None)
            nre, nim = stft_pair(Tensor(n[None, :]), stft_cfg)
            nmag = np.hypot(nre.data, nim.data)
            phase = np.arctan2(nim.data, nre.data)
            _, enh = model.forward(Tensor(nmag))
            est = _estimate_waveforms(enh.data, phase, stft_cfg, seg)[0]
            errs.append(spectral_errors(c, est, stft_cfg))
        mean_errs = tuple(float(np.mean([e[k] for e in errs])) for k in range(3))
        results[p] = {"errors": mean_errs, "result": res}
        rows.append(f"{p:g},{mean_errs[0]:.10g},{mean_errs[1]:.10g},{mean_errs[2]:.10g},"
                    f"{res.losses[-1]:.10g}")
    mags = [results[p]["errors"][0] for p in p_values]
    monotone = all(mags[i] <= mags[i + 1] for i in range(len(mags) - 1))
    rows.append(f"# error_mag monotone nondecreasing in P: {monotone} "
                "(logged observation; training-dependent, not asserted)")
    (out_dir / "loss_study.csv").write_text("\n".join(rows) + "\n")
    return results
