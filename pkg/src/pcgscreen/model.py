"""Inception-style 1D CNN: configuration, construction, inference, head swap, weight files."""

from __future__ import annotations

import enum
import hashlib
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigInvalid, CorruptFile, FingerprintMismatch, ShapeMismatch

WEIGHTS_MAGIC = b"PCGW"
WEIGHTS_FORMAT_VERSION = 1


class Head(str, enum.Enum):
    SIGMOID_1 = "sigmoid"
    SOFTMAX_K = "softmax"


@dataclass(frozen=True)
class InceptionModuleConfig:
    bottleneck_channels: int = 32
    kernel_sizes: tuple[int, ...] = (10, 20, 40)
    filters_per_branch: int = 32
    use_bottleneck: bool = True

    def __post_init__(self):
        ks = tuple(int(k) for k in self.kernel_sizes)
        object.__setattr__(self, "kernel_sizes", ks)
        if self.bottleneck_channels < 1 or self.filters_per_branch < 1:
            raise ConfigInvalid("channel counts must be positive")
        if len(ks) != 3 or any(k < 1 for k in ks):
            raise ConfigInvalid(f"need three positive kernel sizes, got {ks}")
        if not all(a < b for a, b in zip(ks, ks[1:])):
            raise ConfigInvalid(f"kernel sizes must be strictly increasing: {ks}")

    @property
    def out_channels(self) -> int:
        # three conv branches + the max-pool branch
        return 4 * self.filters_per_branch


@dataclass(frozen=True)
class NetworkConfig:
    depth: int = 10
    residual_period: int = 3
    module: InceptionModuleConfig = field(default_factory=InceptionModuleConfig)
    num_classes: int = 2
    head: Head = Head.SOFTMAX_K
    input_length: int = 12000
    input_channels: int = 1
    use_batchnorm: bool = True

    def __post_init__(self):
        object.__setattr__(self, "head", Head(self.head))
        if self.depth < 1 or self.residual_period < 1:
            raise ConfigInvalid("depth and residual_period must be >= 1")
        if self.input_length < 1 or self.input_channels < 1 or self.num_classes < 1:
            raise ConfigInvalid("input_length, input_channels and num_classes must be >= 1")
        if (self.head is Head.SIGMOID_1) != (self.num_classes == 1):
            raise ConfigInvalid("sigmoid head requires num_classes == 1, softmax requires >= 2")

    def to_dict(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "module":
                for mf in fields(value):
                    v = getattr(value, mf.name)
                    out[f"module.{mf.name}"] = ",".join(map(str, v)) if isinstance(v, tuple) else _fmt(v)
            else:
                out[f.name] = _fmt(value)
        return out

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.to_dict().items())

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> "NetworkConfig":
        kw, mkw = {}, {}
        types = {f.name: f.type for f in fields(cls)}
        mtypes = {f.name: f.type for f in fields(InceptionModuleConfig)}
        for key, raw in d.items():
            if key.startswith("module."):
                name = key[len("module.") :]
                if name not in mtypes:
                    raise ConfigInvalid(f"unknown network key {key!r}")
                mkw[name] = _parse(raw, mtypes[name])
            elif key in types:
                kw[key] = _parse(raw, types[key])
            else:
                raise ConfigInvalid(f"unknown network key {key!r}")
        return cls(module=InceptionModuleConfig(**mkw), **kw)

    @classmethod
    def from_text(cls, text: str) -> "NetworkConfig":
        return cls.from_dict(parse_kv(text))

    def fingerprint(self) -> bytes:
        return hashlib.sha256(self.to_text().encode()).digest()


def _fmt(v) -> str:
    if isinstance(v, enum.Enum):
        return str(v.value)
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _parse(raw: str, typ):
    typ = str(typ)
    try:
        if "bool" in typ:
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if "tuple" in typ:
            return tuple(int(v) for v in raw.split(","))
        if "Head" in typ:
            return Head(raw)
        if "float" in typ:
            return float(raw)
        return int(raw)
    except ValueError as exc:
        raise ConfigInvalid(f"cannot parse {raw!r} as {typ}") from exc


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        if "=" not in ln:
            raise ConfigInvalid(f"expected key=value, got {ln!r}")
        k, _, v = ln.partition("=")
        out[k.strip()] = v.strip()
    return out


def save_config(cfg: NetworkConfig, path) -> None:
    Path(path).write_text(cfg.to_text())


def load_config(path) -> NetworkConfig:
    return NetworkConfig.from_text(Path(path).read_text())


# ------------------------------------------------------------------ structure


def residual_joins(cfg: NetworkConfig) -> list[int]:
    """1-based module indices after which a shortcut is added."""
    return [i for i in range(1, cfg.depth + 1) if i % cfg.residual_period == 0]


def _module_in_channels(cfg: NetworkConfig, i: int) -> int:
    return cfg.input_channels if i == 1 else cfg.module.out_channels


def _uses_bottleneck(cfg: NetworkConfig, cin: int) -> bool:
    # a bottleneck on a single-channel input would only rescale it
    return cfg.module.use_bottleneck and cin > 1


def parameter_shapes(cfg: NetworkConfig) -> tuple[dict[str, tuple], dict[str, tuple]]:
    """(trainable, buffer) tensor shapes in canonical order."""
    m = cfg.module
    F, C = m.filters_per_branch, m.out_channels
    params: dict[str, tuple] = {}
    buffers: dict[str, tuple] = {}

    def bn(prefix, ch):
        if cfg.use_batchnorm:
            params[f"{prefix}.gamma"] = (ch,)
            params[f"{prefix}.beta"] = (ch,)
            buffers[f"{prefix}.running_mean"] = (ch,)
            buffers[f"{prefix}.running_var"] = (ch,)

    res_ch = cfg.input_channels
    joins = set(residual_joins(cfg))
    for i in range(1, cfg.depth + 1):
        cin = _module_in_channels(cfg, i)
        branch_in = cin
        if _uses_bottleneck(cfg, cin):
            params[f"module{i}.bottleneck.w"] = (m.bottleneck_channels, cin, 1)
            branch_in = m.bottleneck_channels
        for j, k in enumerate(m.kernel_sizes, start=1):
            params[f"module{i}.branch{j}.w"] = (F, branch_in, k)
        params[f"module{i}.pool.w"] = (F, cin, 1)
        bn(f"module{i}.bn", C)
        if i in joins:
            params[f"shortcut{i}.w"] = (C, res_ch, 1)
            bn(f"shortcut{i}.bn", C)
            res_ch = C
    params["head.w"] = (C, cfg.num_classes)
    params["head.b"] = (cfg.num_classes,)
    return params, buffers


def parameter_count(cfg: NetworkConfig) -> int:
    """Trainable parameter count in closed form.

    Per module with input channels c (c = input_channels for the first,
    4F afterwards), bottleneck width b, filters F, kernel sizes k1..k3:
        [c*b if bottlenecked] + F*(k1+k2+k3)*(b or c) + F*c + [2*4F if batchnorm]
    Per shortcut with input channels r: r*4F + [2*4F if batchnorm].
    Head: 4F*K + K.
    """
    m = cfg.module
    F, C = m.filters_per_branch, m.out_channels
    bn = 2 * C if cfg.use_batchnorm else 0
    total = 0
    for i in range(1, cfg.depth + 1):
        c = _module_in_channels(cfg, i)
        if _uses_bottleneck(cfg, c):
            total += c * m.bottleneck_channels + F * sum(m.kernel_sizes) * m.bottleneck_channels
        else:
            total += F * sum(m.kernel_sizes) * c
        total += F * c + bn
    for n, _ in enumerate(residual_joins(cfg)):
        r = cfg.input_channels if n == 0 else C
        total += r * C + bn
    return total + C * cfg.num_classes + cfg.num_classes


# ---------------------------------------------------------------------- model


class Model:
    """Parameter store plus the forward pass for one NetworkConfig."""

    def __init__(self, config: NetworkConfig, params: dict[str, Tensor], buffers: dict[str, np.ndarray]):
        self.config = config
        self.params = params
        self.buffers = buffers

    @property
    def dtype(self):
        return self.params["head.w"].dtype

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state(self) -> dict[str, np.ndarray]:
        """Copies of every tensor (parameters then buffers) keyed by name."""
        out = {k: p.data.copy() for k, p in self.params.items()}
        out.update({k: b.copy() for k, b in self.buffers.items()})
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise ShapeMismatch(f"{k}: {state[k].shape} vs {p.shape}")
            p.data = np.array(state[k], dtype=p.dtype)
        for k, b in self.buffers.items():
            if state[k].shape != b.shape:
                raise ShapeMismatch(f"{k}: {state[k].shape} vs {b.shape}")
            b[...] = state[k]

    def checksums(self) -> dict[str, str]:
        return {k: hashlib.sha256(np.ascontiguousarray(v).tobytes()).hexdigest() for k, v in self.state().items()}

    # -- forward

    def _bn(self, x, prefix, training):
        if not self.config.use_batchnorm:
            return x
        return ad.batchnorm1d(
            x,
            self.params[f"{prefix}.gamma"],
            self.params[f"{prefix}.beta"],
            self.buffers[f"{prefix}.running_mean"],
            self.buffers[f"{prefix}.running_var"],
            training,
        )

    def _inception(self, x, i, training):
        p = self.params
        z = ad.conv1d(x, p[f"module{i}.bottleneck.w"]) if f"module{i}.bottleneck.w" in p else x
        branches = [ad.conv1d(z, p[f"module{i}.branch{j}.w"]) for j in (1, 2, 3)]
        branches.append(ad.conv1d(ad.maxpool1d(x, 3), p[f"module{i}.pool.w"]))
        h = ad.concat_channels(branches)
        return ad.relu(self._bn(h, f"module{i}.bn", training))

    def features(self, x: Tensor, training: bool = False) -> Tensor:
        """Trunk output after global average pooling, shape (B, 4F)."""
        res = h = x
        for i in range(1, self.config.depth + 1):
            h = self._inception(h, i, training)
            if i % self.config.residual_period == 0:
                s = self._bn(ad.conv1d(res, self.params[f"shortcut{i}.w"]), f"shortcut{i}.bn", training)
                h = ad.relu(ad.add(h, s))
                res = h
        return ad.global_avg_pool(h)

    def forward(self, batch, training: bool = False) -> Tensor:
        """Class probabilities (B, K); sigmoid head gives (B, 1)."""
        x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=self.dtype))
        cfg = self.config
        if x.ndim != 3 or x.shape[1:] != (cfg.input_channels, cfg.input_length):
            raise ShapeMismatch(
                f"expected (B, {cfg.input_channels}, {cfg.input_length}), got {x.shape}"
            )
        if x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype), requires_grad=x.requires_grad)
        logits = ad.dense(self.features(x, training), self.params["head.w"], self.params["head.b"])
        if cfg.head is Head.SIGMOID_1:
            return ad.sigmoid(logits)
        return ad.softmax(logits)

    __call__ = forward

    def predict(self, x: np.ndarray, batch_size: int = 32, threads: int = 1) -> np.ndarray:
        """EVAL-mode class probabilities for an array of shape (N, C, L)."""
        x = np.asarray(x, dtype=self.dtype)
        starts = list(range(0, len(x), batch_size))

        def run(s):
            with ad.no_grad():
                return self.forward(x[s : s + batch_size], training=False).data

        if threads > 1 and len(starts) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(run, starts))
        else:
            parts = [run(s) for s in starts]
        if not parts:
            return np.zeros((0, self.config.num_classes), dtype=self.dtype)
        return np.concatenate(parts, axis=0)

    def positive_probability(self, x: np.ndarray, batch_size: int = 32, threads: int = 1) -> np.ndarray:
        probs = self.predict(x, batch_size, threads).astype(np.float64)
        return probs[:, 0] if self.config.head is Head.SIGMOID_1 else probs[:, 1]

    def copy(self) -> "Model":
        clone = Model(
            self.config,
            {k: Tensor(p.data.copy(), requires_grad=True, name=k) for k, p in self.params.items()},
            {k: b.copy() for k, b in self.buffers.items()},
        )
        return clone


def _he_uniform(rng, shape, dtype):
    fan_in = int(np.prod(shape[1:])) if len(shape) == 3 else shape[0]
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _init_tensor(name, shape, rng, dtype):
    if name.endswith(".gamma"):
        return np.ones(shape, dtype=dtype)
    if name.endswith(".beta") or name.endswith(".b"):
        return np.zeros(shape, dtype=dtype)
    return _he_uniform(rng, shape, dtype)


def build_network(cfg: NetworkConfig, seed: int = 0, dtype=np.float32) -> Model:
    """Fresh network with He-uniform weights drawn in canonical tensor order."""
    rng = np.random.default_rng(seed)
    pshapes, bshapes = parameter_shapes(cfg)
    params = {
        name: Tensor(_init_tensor(name, shape, rng, dtype), requires_grad=True, name=name)
        for name, shape in pshapes.items()
    }
    buffers = {
        name: (np.zeros(shape, dtype=dtype) if name.endswith("running_mean") else np.ones(shape, dtype=dtype))
        for name, shape in bshapes.items()
    }
    return Model(cfg, params, buffers)


def replace_head(model: Model, num_classes: int = 2, seed: int = 0) -> Model:
    """New model sharing copies of the trunk with a fresh dense head (softmax for K >= 2)."""
    head = Head.SOFTMAX_K if num_classes >= 2 else Head.SIGMOID_1
    cfg = replace(model.config, num_classes=num_classes, head=head)
    rng = np.random.default_rng(seed)
    pshapes, _ = parameter_shapes(cfg)
    params = {}
    for name, shape in pshapes.items():
        if name.startswith("head."):
            params[name] = Tensor(_init_tensor(name, shape, rng, model.dtype), requires_grad=True, name=name)
        else:
            params[name] = Tensor(model.params[name].data.copy(), requires_grad=True, name=name)
    buffers = {k: b.copy() for k, b in model.buffers.items()}
    return Model(cfg, params, buffers)


# ---------------------------------------------------------------- weight file


@dataclass
class ModelWeights:
    tensors: dict[str, np.ndarray]
    format_version: int
    architecture_fingerprint: bytes


def _record_bytes(name: str, arr: np.ndarray) -> bytes:
    nb = name.encode("utf-8")
    body = struct.pack("<I", len(nb)) + nb + struct.pack("<I", arr.ndim)
    body += struct.pack(f"<{arr.ndim}I", *arr.shape)
    body += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def encode_weights(model: Model) -> bytes:
    state = model.state()
    for name, arr in state.items():
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"tensor {name} has non-finite values")
    out = bytearray(WEIGHTS_MAGIC)
    out += struct.pack("<I", WEIGHTS_FORMAT_VERSION)
    out += model.config.fingerprint()
    out += struct.pack("<I", len(state))
    for name, arr in state.items():
        out += _record_bytes(name, arr)
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def save_weights(model: Model, path) -> None:
    Path(path).write_bytes(encode_weights(model))


def decode_weights(raw: bytes, cfg: NetworkConfig) -> ModelWeights:
    if len(raw) < 4 + 4 + 32 + 4 + 4:
        raise CorruptFile("weight file too short")
    (file_crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) != file_crc:
        raise CorruptFile("whole-file checksum mismatch")
    if raw[:4] != WEIGHTS_MAGIC:
        raise CorruptFile("bad magic")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != WEIGHTS_FORMAT_VERSION:
        raise CorruptFile(f"unsupported format version {version}")
    fingerprint = raw[8:40]
    if fingerprint != cfg.fingerprint():
        raise FingerprintMismatch("weight file was written for a different network configuration")
    (count,) = struct.unpack_from("<I", raw, 40)
    pos = 44
    end = len(raw) - 4
    tensors = {}
    try:
        for _ in range(count):
            start = pos
            (nlen,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            n = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(raw, dtype="<f4", count=n, offset=pos).reshape(shape)
            pos += 4 * n
            (crc,) = struct.unpack_from("<I", raw, pos)
            if zlib.crc32(raw[start:pos]) != crc:
                raise CorruptFile(f"record checksum mismatch for {name}")
            pos += 4
            tensors[name] = data.astype(np.float32)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, CorruptFile):
            raise
        raise CorruptFile(f"malformed tensor record: {exc}") from exc
    if pos != end:
        raise CorruptFile("trailing bytes after tensor records")
    pshapes, bshapes = parameter_shapes(cfg)
    expected = {**pshapes, **bshapes}
    if set(expected) != set(tensors) or any(tensors[k].shape != expected[k] for k in expected):
        raise CorruptFile("tensor names or shapes disagree with the configuration")
    return ModelWeights(tensors, version, fingerprint)


def load_weights(path, cfg: NetworkConfig) -> ModelWeights:
    return decode_weights(Path(path).read_bytes(), cfg)


def model_from_weights(weights: ModelWeights, cfg: NetworkConfig, dtype=np.float32) -> Model:
    model = build_network(cfg, seed=0, dtype=dtype)
    model.load_state(weights.tensors)
    return model
