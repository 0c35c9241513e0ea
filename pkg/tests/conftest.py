import numpy as np
import pytest

from dualpath_har.model import (
    ChannelPartition,
    DensePathConfig,
    DualPathNetwork,
    ResidualPathConfig,
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_network(num_classes=3, d_proj=4, seed=42, widths=(4, 4, 4, 4),
                 res_blocks=(1, 1, 1, 1), dense_layers=(1, 1, 1, 1),
                 channels=(2, 2)):
    """Miniature dual-path network used by gradient and trainer tests."""
    partition = ChannelPartition.contiguous(*channels)
    return DualPathNetwork(
        partition,
        ResidualPathConfig(blocks_per_stage=res_blocks, stage_widths=widths),
        DensePathConfig(layers_per_stage=dense_layers, growth_rate=4,
                        stem_channels=widths[0], stage_widths=widths),
        num_classes=num_classes,
        d_proj=d_proj,
        rng=np.random.default_rng(seed),
    )
