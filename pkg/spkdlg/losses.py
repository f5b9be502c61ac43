from __future__ import annotations

from typing import Union

import numpy as np

from spkdlg import tensor_core as tc
from spkdlg.errors import ContractError
from spkdlg.tensor_core import Tensor

PROB_EPS = 1e-7


def multilabel_xent(o: Tensor, y: Union[np.ndarray, Tensor]) -> Tensor:
    """
    Summed binary cross-entropy over labels.

    Probabilities are clipped to [eps, 1 - eps] first, so the loss is always finite.
    """
    y_data = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
    if o.shape != y_data.shape:
        raise ContractError(f"multilabel_xent: prediction shape {o.shape} vs target shape {y_data.shape}")
    p = tc.clip(o, PROB_EPS, 1.0 - PROB_EPS)
    positive = tc.mul(y_data, tc.log(p))
    negative = tc.mul(1.0 - y_data, tc.log(tc.sub(1.0, p)))
    return tc.scale(tc.sum(positive + negative), -1.0)
