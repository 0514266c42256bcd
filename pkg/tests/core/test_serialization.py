import numpy as np
import pytest

from bnrectify.core import serialization
from bnrectify.core.errors import FormatError
from bnrectify.core.model import build_preset, model_digest


class TestRoundTrip:

    def setup_method(self):
        self.model = build_preset("tiny-cnn-bn", input_shape=(3, 8, 8), seed=5)

    def test_parameters_are_bitwise_identical(self, tmp_path):
        serialization.save(self.model, tmp_path / "m")
        loaded = serialization.load(tmp_path / "m")
        assert loaded.parameter_keys() == self.model.parameter_keys()
        for key in self.model.parameter_keys():
            assert np.array_equal(loaded.params[key], self.model.params[key])
        assert model_digest(loaded) == model_digest(self.model)

    def test_structure_and_metadata_survive(self, tmp_path):
        serialization.save(self.model, tmp_path / "m")
        loaded = serialization.load(tmp_path / "m.manifest")
        assert loaded.layers == self.model.layers
        assert loaded.input_shape == (3, 8, 8)
        assert loaded.flavor == "bn"
        assert dict(loaded.metadata) == dict(self.model.metadata)

    def test_saving_twice_gives_identical_files(self, tmp_path):
        first = serialization.save(self.model, tmp_path / "a")
        second = serialization.save(self.model, tmp_path / "b")
        for left, right in zip(first, second):
            assert left.read_bytes() == right.read_bytes()

    def test_manifest_layout(self):
        text = serialization.render_manifest(self.model)
        lines = text.splitlines()
        assert lines[0] == "bnrectify-model 1"
        assert "[layer conv1]" in lines
        assert "params=weight:16x3x3x3,bias:16" in lines
        assert "params=gamma:16,beta:16,pop_mean:16,pop_var:16" in lines

    def test_group_norm_model(self, tmp_path):
        model = build_preset("tiny-cnn-gn", input_shape=(3, 8, 8))
        serialization.save(model, tmp_path / "gn")
        assert model_digest(serialization.load(tmp_path / "gn")) == model_digest(model)


class TestLoadErrors:

    def setup_method(self):
        self.model = build_preset("ref-baseline", input_shape=(3, 8, 8))

    def test_magic_mismatch(self, tmp_path):
        manifest, _ = serialization.save(self.model, tmp_path / "m")
        text = manifest.read_text()
        manifest.write_text(text.replace("bnrectify-model 1", "bnrectify-model 2", 1))
        with pytest.raises(FormatError, match="magic/version mismatch"):
            serialization.load(tmp_path / "m")

    def test_blob_length_mismatch(self, tmp_path):
        _, blob = serialization.save(self.model, tmp_path / "m")
        blob.write_bytes(blob.read_bytes()[:-4])
        with pytest.raises(FormatError, match="blob length mismatch"):
            serialization.load(tmp_path / "m")

    def test_non_finite_parameter(self, tmp_path):
        _, blob = serialization.save(self.model, tmp_path / "m")
        data = bytearray(blob.read_bytes())
        data[:4] = np.array([np.nan], dtype="<f4").tobytes()
        blob.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="non-finite parameter 'conv1.weight'"):
            serialization.load(tmp_path / "m")

    def test_missing_files(self, tmp_path):
        with pytest.raises(FormatError, match="cannot read model"):
            serialization.load(tmp_path / "absent")

    def test_unknown_section(self, tmp_path):
        manifest, _ = serialization.save(self.model, tmp_path / "m")
        manifest.write_text(manifest.read_text() + "[extras]\nkey=value\n")
        with pytest.raises(FormatError, match="unknown section"):
            serialization.load(tmp_path / "m")


class TestModelPaths:

    @pytest.mark.parametrize("given", ["out/m", "out/m.manifest", "out/m.blob"])
    def test_any_form_resolves_to_both_files(self, given):
        manifest, blob = serialization.model_paths(given)
        assert (manifest.name, blob.name) == ("m.manifest", "m.blob")
