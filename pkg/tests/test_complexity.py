from unittest import TestCase

import pytest

from unetr.complexity import (
    REFERENCE_FLOPS, REFERENCE_PARAMS, compare_reference, count_params_flops, parameter_groups,
)
from unetr.models import ModelConfig
from unetr.network import parameter_shapes

from tests.common import tiny_model


class TestComplexity(TestCase):

    def setUp(self) -> None:
        self.config = ModelConfig.vit_b16()
        self.report = count_params_flops(self.config)
        return super().setUp()

    def test_reference_parameters(self):
        assert self.report.params == 89_883_792
        assert abs(self.report.params / REFERENCE_PARAMS - 1.0) < 0.05

    def test_reference_flops(self):
        assert abs(self.report.flops / REFERENCE_FLOPS - 1.0) < 0.15
        deviation = compare_reference(self.report)
        assert deviation['flops'] == pytest.approx(self.report.flops / REFERENCE_FLOPS - 1.0)

    def test_block_parameters(self):
        groups = parameter_groups(self.config)
        assert groups['encoder.layer1'] == 7_087_104
        assert groups['embedding'] == 4096 * 768 + 216 * 768
        shapes = parameter_shapes(self.config)
        assert shapes['encoder.layer1.attn.q.weight'] == (768, 768)
        assert shapes['encoder.layer1.attn.q.bias'] == (768,)

    def test_rows_add_up(self):
        model = tiny_model()
        report = count_params_flops(model.config)
        assert sum(r.params for r in report.rows) == report.params == model.n_params
        assert all(r.flops > 0 for r in report.rows)

    def test_sequence_length(self):
        assert self.report.n_patches == 216
        coarse = count_params_flops(ModelConfig.vit_b16(patch_size=32, decoder_widths=None))
        assert coarse.n_patches == 27
        assert coarse.flops < self.report.flops

    def test_sliding_windows(self):
        report = count_params_flops(self.config, input_size=(144, 144, 144))
        assert report.windows == 27
        assert report.evaluated_windows == 8
        assert report.total_pass_flops == 8 * report.flops
        assert self.report.windows == self.report.evaluated_windows == 1
