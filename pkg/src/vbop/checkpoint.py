"""Checkpoint persistence for trained models.

A checkpoint carries the network architecture, the variational parameter
vectors, the training-set normalization statistics, and (so training can be
resumed exactly) the optimizer moments and epoch counter. Everything is
little-endian with a trailing CRC32.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .binio import ByteReader, ByteWriter, check_magic, verify_crc
from .dataset import NormStats, read_norm_block, write_norm_block
from .errors import VersionError
from .model import DeepONetSpec
from .net import LayerSpec, NetSpec
from .variational import VariationalParams

CHECKPOINT_MAGIC = b"VBDOCKP1"
CHECKPOINT_VERSION = 1

_ACT_CODE = {"relu": 0, "linear": 1}
_ACT_NAME = {v: k for k, v in _ACT_CODE.items()}

_FLAG_NORM = 1
_FLAG_OPT = 2
_FLAG_SCALAR_MERGE = 4
_FLAG_BASELINE = 8


@dataclass
class OptimizerState:
    """First/second moment vectors over the stacked (mu, delta) parameters."""

    step: int
    m: np.ndarray
    v: np.ndarray


@dataclass
class Checkpoint:
    spec: DeepONetSpec
    params: VariationalParams
    norm: Optional[NormStats] = None
    opt: Optional[OptimizerState] = None
    epoch: int = 0
    baseline: bool = False


def _write_netspec(w: ByteWriter, spec: NetSpec):
    w.pack("H", len(spec.layers))
    for layer in spec.layers:
        w.pack("IIB", layer.in_dim, layer.out_dim, _ACT_CODE[layer.activation])


def _read_netspec(r: ByteReader) -> NetSpec:
    (n_layers,) = r.unpack("H")
    layers = []
    for _ in range(n_layers):
        in_dim, out_dim, act = r.unpack("IIB")
        layers.append(LayerSpec(in_dim, out_dim, _ACT_NAME[act]))
    return NetSpec(tuple(layers))


def save_checkpoint(path, ck: Checkpoint) -> None:
    flags = 0
    if ck.norm is not None:
        flags |= _FLAG_NORM
    if ck.opt is not None:
        flags |= _FLAG_OPT
    if ck.spec.merge == "scalar":
        flags |= _FLAG_SCALAR_MERGE
    if ck.baseline:
        flags |= _FLAG_BASELINE
    w = ByteWriter()
    w.raw(CHECKPOINT_MAGIC)
    w.pack("BB", CHECKPOINT_VERSION, flags)
    w.pack("d", ck.spec.sigma_floor)
    _write_netspec(w, ck.spec.branch)
    _write_netspec(w, ck.spec.trunk)
    _write_netspec(w, ck.spec.head_spec)
    w.pack("QQ", ck.params.size, ck.epoch)
    w.array(ck.params.mu)
    w.array(ck.params.delta)
    if ck.norm is not None:
        write_norm_block(w, ck.norm)
    if ck.opt is not None:
        w.pack("Q", ck.opt.step)
        w.array(ck.opt.m)
        w.array(ck.opt.v)
    with open(path, "wb") as fh:
        fh.write(w.finish_with_crc())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    body = verify_crc(blob)
    r = ByteReader(body)
    check_magic(r, CHECKPOINT_MAGIC, "checkpoint")
    version, flags = r.unpack("BB")
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"checkpoint format version {version} unsupported "
                           f"(expected {CHECKPOINT_VERSION})")
    (sigma_floor,) = r.unpack("d")
    branch = _read_netspec(r)
    trunk = _read_netspec(r)
    head_spec = _read_netspec(r)
    size, epoch = r.unpack("QQ")
    mu = r.array(size)
    delta = r.array(size)
    spec = DeepONetSpec(branch=branch, trunk=trunk, head=head_spec.layers[0],
                        merge="scalar" if flags & _FLAG_SCALAR_MERGE else "hadamard",
                        sigma_floor=sigma_floor)
    norm = read_norm_block(r, branch.in_dim) if flags & _FLAG_NORM else None
    opt = None
    if flags & _FLAG_OPT:
        (step,) = r.unpack("Q")
        m = r.array(2 * size)
        v = r.array(2 * size)
        opt = OptimizerState(step=step, m=m, v=v)
    r.expect_exhausted()
    return Checkpoint(spec=spec, params=VariationalParams(mu=mu, delta=delta),
                      norm=norm, opt=opt, epoch=int(epoch),
                      baseline=bool(flags & _FLAG_BASELINE))
