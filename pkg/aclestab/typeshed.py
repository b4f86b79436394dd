import os
from typing import TypeAlias

import numpy as np
import numpy.typing as npt


StrPath: TypeAlias = str | os.PathLike[str]

JsonData: TypeAlias = (
    None | bool | str | int | float | list['JsonData'] | dict[str, 'JsonData']
)

FloatArray: TypeAlias = npt.NDArray[np.float64]
ComplexArray: TypeAlias = npt.NDArray[np.complex128]
IntArray: TypeAlias = npt.NDArray[np.int64]
BoolArray: TypeAlias = npt.NDArray[np.bool_]
