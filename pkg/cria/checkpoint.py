"""
cria/checkpoint.py — Состояние обучения и его файл

Формат:
  b'CRIACKPT' | u16 версия | u32 длина заголовка | JSON-заголовок (sort_keys)
  затем тензоры подряд: float64 little-endian в порядке таблицы заголовка

Заголовок: гиперпараметры модели, конфигурация запуска, шаг, состояние RNG,
реестр каналов, параметры Adam, голова (если есть), замороженные имена
и таблица тензоров {name, kind, shape}. save → load → save даёт те же байты.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import EncoderParams, ModelShape, init_encoder_params, param_layout
from .exceptions import CheckpointError
from .finetune import HeadParams
from .optim import Adam
from .records import ChannelRegistry
from .seeding import rng_from_state, rng_state, stream
from .tensor import Tensor

logger = logging.getLogger(__name__)

MAGIC = b'CRIACKPT'
VERSION = 1
_PREFIX = struct.Struct('<8sHI')
HEAD_TENSORS = {'head.fc1.w', 'head.fc1.b', 'head.ln.g', 'head.ln.b', 'head.fc2.w', 'head.fc2.b'}


@dataclass
class TrainState:
    params: EncoderParams
    registry: ChannelRegistry
    optimizer: Adam
    rng: np.random.Generator
    step: int = 0
    head: HeadParams | None = None
    config: dict = field(default_factory=dict)


def new_state(cfg, seed: int) -> TrainState:
    """Свежая инициализация энкодера от сида запуска."""
    hp = ModelShape.from_config(cfg)
    params = init_encoder_params(hp, stream(seed, 'init'))
    return TrainState(params=params, registry=ChannelRegistry(hp.c_max), optimizer=Adam.from_config(cfg),
                      rng=stream(seed, 'train'), config=config_record(cfg.as_dict()))


def config_record(values: dict) -> dict:
    """Значения RunConfig в виде, пригодном для JSON-заголовка."""
    return {k: list(v) if isinstance(v, tuple) else v for k, v in values.items()}


def _table(state: TrainState) -> list[tuple[str, str, np.ndarray]]:
    rows = [(n, 'param', t.data) for n, t in sorted(state.params.items())]
    if state.head is not None:
        rows += [(n, 'head', t.data) for n, t in sorted(state.head.tensors.items())]
    rows += [(n, 'adam_m', a) for n, a in sorted(state.optimizer.m.items())]
    rows += [(n, 'adam_v', a) for n, a in sorted(state.optimizer.v.items())]
    return rows


def checkpoint_bytes(state: TrainState) -> bytes:
    rows = _table(state)
    header = {
        'version': VERSION,
        'step': state.step,
        'model': state.params.hp.to_dict(),
        'config': state.config,
        'registry': state.registry.to_dict(),
        'rng': rng_state(state.rng),
        'optimizer': state.optimizer.state(),
        'frozen': sorted(state.params.frozen),
        'head': None if state.head is None else {
            'num_classes': state.head.num_classes, 'dropout': state.head.dropout, 'loss': state.head.loss},
        'tensors': [{'name': n, 'kind': k, 'shape': list(a.shape)} for n, k, a in rows],
    }
    meta = json.dumps(header, sort_keys=True, separators=(',', ':'), ensure_ascii=False).encode('utf-8')
    body = b''.join(np.ascontiguousarray(a, dtype='<f8').tobytes() for _, _, a in rows)
    return _PREFIX.pack(MAGIC, VERSION, len(meta)) + meta + body


def save_checkpoint(path: str | Path, state: TrainState) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(state))
    logger.debug('Чекпоинт шага %s записан в %s', state.step, path)
    return path


def load_checkpoint(path: str | Path) -> TrainState:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f'Чекпоинт не найден: {path}')
    buf = path.read_bytes()
    if len(buf) < _PREFIX.size:
        raise CheckpointError(f'{path}: файл короче префикса')
    magic, version, meta_len = _PREFIX.unpack_from(buf, 0)
    if magic != MAGIC:
        raise CheckpointError(f'{path}: это не чекпоинт CRIA (сигнатура {magic!r})')
    if version != VERSION:
        raise CheckpointError(f'{path}: версия чекпоинта {version}, поддерживается {VERSION}')
    try:
        header = json.loads(buf[_PREFIX.size:_PREFIX.size + meta_len].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f'{path}: повреждён заголовок ({e})') from None
    if not isinstance(header, dict):
        raise CheckpointError(f'{path}: заголовок должен быть JSON-объектом')

    try:
        arrays = _read_tensors(path, buf, header, _PREFIX.size + meta_len)
        return _state_from_header(path, header, arrays)
    except CheckpointError:
        raise
    except KeyError as e:
        raise CheckpointError(f'{path}: в заголовке нет ключа {e}') from None
    except (TypeError, ValueError, AttributeError) as e:
        raise CheckpointError(f'{path}: некорректный заголовок ({e})') from None


def _read_tensors(path: Path, buf: bytes, header: dict, offset: int) -> dict[str, dict[str, np.ndarray]]:
    arrays: dict[str, dict[str, np.ndarray]] = {'param': {}, 'head': {}, 'adam_m': {}, 'adam_v': {}}
    for entry in header['tensors']:
        shape = tuple(int(s) for s in entry['shape'])
        if any(s < 0 for s in shape):
            raise CheckpointError(f'{path}: отрицательная размерность тензора {entry["name"]}: {shape}')
        if entry['kind'] not in arrays:
            raise CheckpointError(f'{path}: неизвестный вид тензора {entry["kind"]!r} ({entry["name"]})')
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(buf):
            raise CheckpointError(f'{path}: данные тензора {entry["name"]} обрезаны (байт {offset})')
        arr = np.frombuffer(buf, dtype='<f8', count=nbytes // 8, offset=offset).reshape(shape)
        arrays[entry['kind']][entry['name']] = arr.astype(np.float64)
        offset += nbytes
    if offset != len(buf):
        raise CheckpointError(f'{path}: лишние {len(buf) - offset} байт после тензоров')
    return arrays


def _state_from_header(path: Path, header: dict, arrays: dict) -> TrainState:
    hp = ModelShape.from_dict(header['model'])
    expected = {n: shape for n, _, shape in param_layout(hp)}
    found = {n: a.shape for n, a in arrays['param'].items()}
    if found != expected:
        missing = sorted(set(expected) - set(found))
        extra = sorted(set(found) - set(expected))
        wrong = sorted(n for n in set(found) & set(expected) if found[n] != expected[n])
        raise CheckpointError(f'{path}: параметры не совпадают с моделью '
                              f'(нет {missing[:3]}, лишние {extra[:3]}, другая форма {wrong[:3]})')
    tensors = {n: Tensor(a, requires_grad=True, name=n) for n, a in arrays['param'].items()}
    params = EncoderParams(hp, tensors)
    params.frozen = set(header['frozen'])

    head = None
    if header['head'] is not None:
        h = header['head']
        if set(arrays['head']) != HEAD_TENSORS:
            raise CheckpointError(f'{path}: неполная голова: {sorted(arrays["head"])}')
        head = HeadParams({n: Tensor(a, requires_grad=True, name=n) for n, a in arrays['head'].items()},
                          h['num_classes'], h['dropout'], h['loss'])
    opt = header['optimizer']
    optimizer = Adam(lr=opt['lr'], beta1=opt['beta1'], beta2=opt['beta2'], eps=opt['eps'], t=opt['t'],
                     m=arrays['adam_m'], v=arrays['adam_v'])
    return TrainState(params=params, registry=ChannelRegistry.from_dict(header['registry']),
                      optimizer=optimizer, rng=rng_from_state(header['rng']), step=int(header['step']),
                      head=head, config=dict(header['config']))
