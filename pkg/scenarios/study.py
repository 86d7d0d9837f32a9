# This file is part of scenarios.
#
# Copyright (C) 2024 Martin Kampas <martin.kampas@ubedi.net>
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.
#
# This program is distributed in the hope that it will be useful, but
# WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the GNU
# General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <http://www.gnu.org/licenses/>.

from abc import ABC, abstractmethod
import logging
import numpy as np

from . import Error
from . import baselines
from .evalkit import reconstruction_error
from .pbmf import PbmfConfig, build_weight_matrix, factorize

logger = logging.getLogger(__name__)

NMF_STUDY_ITERS = 1000

class ReconMethod(ABC):
    """A way to reconstruct an object-scene matrix at a given scenario count."""

    _types = {}

    def __init__(self, base_cfg):
        self._base_cfg = base_cfg

    @classmethod
    def register_type(cls, typecls):
        name = typecls.type_name()
        if name in cls._types:
            raise Error(f"Reconstruction method '{name}' already registered")
        cls._types[name] = typecls
        return typecls

    @classmethod
    def registered_type_names(cls):
        return cls._types.keys()

    @classmethod
    def create(cls, type_name, base_cfg):
        if type_name not in cls._types:
            raise Error('Not a recognized reconstruction method: {}'.format(type_name))
        return cls._types[type_name](base_cfg)

    @staticmethod
    @abstractmethod
    def type_name():
        pass

    @property
    def seed(self):
        return self._base_cfg.seed

    @abstractmethod
    def factors(self, a, k):
        """Return (W, H, product kind) reconstructing the ObjectSceneMatrix a."""
        pass

@ReconMethod.register_type
class SvdMethod(ReconMethod):
    @staticmethod
    def type_name():
        return 'svd'

    def factors(self, a, k):
        u, s, v = baselines.truncated_svd(a.matrix, k, seed=self.seed)
        return u * s, v.T, 'real'

@ReconMethod.register_type
class NmfMethod(ReconMethod):
    @staticmethod
    def type_name():
        return 'nmf'

    def factors(self, a, k):
        return (*baselines.best_nmf(a.matrix, k, NMF_STUDY_ITERS, self.seed), 'real')

@ReconMethod.register_type
class GreedyBmfMethod(ReconMethod):
    @staticmethod
    def type_name():
        return 'greedy-bmf'

    def factors(self, a, k):
        return (*baselines.greedy_bmf(a.matrix, k), 'boolean')

@ReconMethod.register_type
class BinaryMfMethod(ReconMethod):
    @staticmethod
    def type_name():
        return 'binary-mf'

    def factors(self, a, k):
        return (*baselines.binary_mf(a.matrix, k, seed=self.seed), 'boolean')

@ReconMethod.register_type
class PbmfBasicMethod(ReconMethod):
    @staticmethod
    def type_name():
        return 'pbmf-basic'

    def factors(self, a, k):
        cfg = PbmfConfig.basic(k, **{name: getattr(self._base_cfg, name) for name in (
            'max_outer_iters', 'inner_steps', 'step_size', 'backtrack_factor', 'tol', 'seed',
            'restarts')})
        model, h, _ = factorize(a, cfg)
        return model.dictionary, h.matrix, 'pseudo_boolean'

@ReconMethod.register_type
class PbmfFullMethod(ReconMethod):
    @staticmethod
    def type_name():
        return 'pbmf-full'

    def factors(self, a, k):
        model, h, _ = factorize(a, self._base_cfg.replace(k=k))
        return model.dictionary, h.matrix, 'pseudo_boolean'

@ReconMethod.register_type
class ZerosMethod(ReconMethod):
    @staticmethod
    def type_name():
        return 'zeros'

    def factors(self, a, k):
        return np.zeros((a.n_objects, 1)), np.zeros((1, a.n_instances)), 'real'

@ReconMethod.register_type
class MeanMethod(ReconMethod):
    @staticmethod
    def type_name():
        return 'mean'

    def factors(self, a, k):
        mean = a.matrix.mean() if a.matrix.size else 0.0
        return np.full((a.n_objects, 1), mean), np.ones((1, a.n_instances)), 'real'

def run_recon_study(a, ks, methods, base_cfg=None):
    """Yield (method, k, error, weighted_error) rows.

    The weighted error applies the rare-object weights of a, so both
    readings of reconstruction quality are available side by side.
    """
    base_cfg = base_cfg or PbmfConfig()
    instances = [ReconMethod.create(name, base_cfg) for name in methods]
    omega = build_weight_matrix(a, literal=base_cfg.literal_weights)

    for k in ks:
        for method in instances:
            w, h, product_kind = method.factors(a, k)
            error = reconstruction_error(a.matrix, w, h, product_kind=product_kind)
            weighted = reconstruction_error(a.matrix, w, h, omega, product_kind)
            logger.info('%s k=%d: error %g, weighted %g', method.type_name(), k, error, weighted)
            yield (method.type_name(), k, error, weighted)
