"""Tests for downstream evaluation: metrics, change detection, probes, inspection."""

import numpy as np
import pytest
import torch
from PIL import Image

from swimdiff.backbone import TileEncoder, get_architecture
from swimdiff.data import SceneTile, SyntheticSceneSpec, TileDataset, generate_synthetic_scenes
from swimdiff.evaluation import (
    ChangeDecoder,
    ChangeDetectConfig,
    ChangePair,
    ConfusionCounts,
    ProbeConfig,
    accuracy_score,
    average_precision,
    change_detect_train,
    difference_features,
    evaluate_change_detection,
    evaluate_probe,
    f1_score,
    generate_synthetic_change_pairs,
    high_frequency_energy,
    high_pass,
    inspect_features,
    load_change_pairs,
    map_score,
    pca_2d,
    pooled_features,
    probe_train,
    save_change_pairs,
    scene_label_array,
    shallow_feature_energy,
    tiles_to_tensor,
)
from swimdiff.exceptions import (
    ConfigurationError,
    ContractError,
    FormatError,
    ManifestError,
    ParameterError,
)


@pytest.fixture(scope="module")
def encoder():
    torch.manual_seed(0)
    return TileEncoder(get_architecture("tiny"))


@pytest.fixture(scope="module")
def change_pairs():
    return generate_synthetic_change_pairs(6, 32, seed=11)


@pytest.fixture(scope="module")
def scene_dataset():
    return generate_synthetic_scenes(
        SyntheticSceneSpec(n_scenes=3, tiles_per_scene=6, tile_size=16), seed=5
    )


def naive_average_precision(scores, labels):
    """Independent oracle: explicit ranking loop with interpolated precision."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    ranked = [labels[i] for i in order]
    n_positive = sum(labels)
    precisions, recalls = [], []
    tp = 0
    for rank, hit in enumerate(ranked, start=1):
        tp += hit
        precisions.append(tp / rank)
        recalls.append(tp / n_positive)
    ap, prev_recall = 0.0, 0.0
    for k in range(len(ranked)):
        ap += (recalls[k] - prev_recall) * max(precisions[k:])
        prev_recall = recalls[k]
    return ap


class TestConfusionCounts:
    def test_negative_rejected(self):
        with pytest.raises(ParameterError):
            ConfusionCounts(tp=-1, fp=0, fn=0, tn=0)

    def test_addition_merges(self):
        total = ConfusionCounts(1, 2, 3, 4) + ConfusionCounts(10, 20, 30, 40)
        assert total == ConfusionCounts(11, 22, 33, 44)
        assert total.total == 110

    def test_from_masks_matches_loop(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            shape = (int(rng.integers(2, 9)), int(rng.integers(2, 9)))
            predicted = rng.integers(0, 2, size=shape).astype(np.uint8)
            target = rng.integers(0, 2, size=shape).astype(np.uint8)
            counts = ConfusionCounts.from_masks(predicted, target)
            tp = fp = fn = tn = 0
            for p, t in zip(predicted.ravel(), target.ravel()):
                if p and t:
                    tp += 1
                elif p and not t:
                    fp += 1
                elif not p and t:
                    fn += 1
                else:
                    tn += 1
            assert counts == ConfusionCounts(tp, fp, fn, tn)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            ConfusionCounts.from_masks(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_nonbinary_rejected(self):
        with pytest.raises(ParameterError):
            ConfusionCounts.from_masks(np.array([0, 2]), np.array([0, 1]))


class TestF1Score:
    def test_hand_computed(self):
        result = f1_score(ConfusionCounts(tp=6, fp=2, fn=4, tn=8))
        assert result.precision == pytest.approx(6 / 8, rel=1e-15)
        assert result.recall == pytest.approx(6 / 10, rel=1e-15)
        expected = 2 * (6 / 8) * (6 / 10) / (6 / 8 + 6 / 10)
        assert result.f1 == pytest.approx(expected, rel=1e-15)
        assert not result.degenerate

    def test_perfect(self):
        result = f1_score(ConfusionCounts(tp=5, fp=0, fn=0, tn=5))
        assert result.f1 == 1.0
        assert not result.degenerate

    def test_no_predictions_degenerate(self):
        result = f1_score(ConfusionCounts(tp=0, fp=0, fn=3, tn=5))
        assert result.f1 == 0.0
        assert result.degenerate

    def test_no_positives_degenerate(self):
        result = f1_score(ConfusionCounts(tp=0, fp=3, fn=0, tn=5))
        assert result.f1 == 0.0
        assert result.degenerate

    def test_all_zero_degenerate(self):
        result = f1_score(ConfusionCounts(0, 0, 0, 0))
        assert result.f1 == 0.0 and result.degenerate


class TestAveragePrecision:
    def test_perfect_ranking(self):
        assert average_precision(np.array([0.9, 0.8, 0.2, 0.1]), np.array([1, 1, 0, 0])) == 1.0

    def test_single_positive_at_rank_k(self):
        # one positive ranked last among k items has AP exactly 1/k
        for k in (1, 2, 3, 5, 8):
            scores = np.linspace(1.0, 0.1, k)
            labels = np.zeros(k, dtype=int)
            labels[-1] = 1
            assert average_precision(scores, labels) == pytest.approx(1 / k, rel=1e-15)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(17)
        for _ in range(300):
            n = int(rng.integers(1, 40))
            # coarse score grid forces ties; stable ordering must agree
            scores = rng.integers(0, 6, size=n).astype(np.float64) / 5.0
            labels = rng.integers(0, 2, size=n)
            if labels.sum() == 0:
                labels[int(rng.integers(n))] = 1
            expected = naive_average_precision(list(scores), list(labels))
            assert average_precision(scores, labels) == pytest.approx(expected, abs=1e-12)

    def test_zero_positives_rejected(self):
        with pytest.raises(ParameterError):
            average_precision(np.array([0.5, 0.4]), np.array([0, 0]))

    def test_nonbinary_labels_rejected(self):
        with pytest.raises(ParameterError):
            average_precision(np.array([0.5, 0.4]), np.array([0, 2]))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ParameterError):
            average_precision(np.array([0.5, 0.4]), np.array([1]))


class TestMapScore:
    def test_mean_over_classes(self):
        rng = np.random.default_rng(29)
        scores = rng.random((30, 4))
        labels = rng.integers(0, 2, size=(30, 4))
        labels[0] = 1  # guarantee every class has a positive
        result = map_score(scores, labels)
        expected = [naive_average_precision(list(scores[:, c]), list(labels[:, c])) for c in range(4)]
        assert result.excluded == ()
        for got, want in zip(result.per_class, expected):
            assert got == pytest.approx(want, abs=1e-12)
        assert result.mean_ap == pytest.approx(float(np.mean(expected)), abs=1e-12)

    def test_zero_positive_class_excluded_with_warning(self):
        scores = np.array([[0.9, 0.1], [0.2, 0.8], [0.7, 0.3]])
        labels = np.array([[1, 0], [0, 0], [1, 0]])
        with pytest.warns(UserWarning, match="class 1"):
            result = map_score(scores, labels)
        assert result.excluded == (1,)
        assert result.per_class[1] is None
        assert result.mean_ap == pytest.approx(result.per_class[0], rel=1e-15)

    def test_all_classes_empty_rejected(self):
        with pytest.raises(ParameterError), pytest.warns(UserWarning):
            map_score(np.array([[0.5], [0.3]]), np.array([[0], [0]]))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ParameterError):
            map_score(np.zeros((3, 2)), np.zeros((3, 3)))


class TestAccuracy:
    def test_basic(self):
        assert accuracy_score(np.array([0, 1, 2, 1]), np.array([0, 1, 1, 1])) == 0.75

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            accuracy_score(np.array([0, 1]), np.array([0]))


class TestChangePairs:
    def test_shapes_and_ranges(self, change_pairs):
        for pair in change_pairs:
            assert pair.image_a.shape == (3, 32, 32)
            assert pair.image_a.dtype == np.float32
            assert pair.mask.shape == (32, 32)
            assert 0.0 <= pair.image_a.min() and pair.image_a.max() <= 1.0
            assert set(np.unique(pair.mask)) <= {0, 1}
            changed = pair.mask.mean()
            assert 0.0 < changed < 1.0

    def test_change_confined_to_mask(self):
        # unchanged pixels differ only by independent noise, changed ones by texture swap
        pairs = generate_synthetic_change_pairs(3, 32, seed=2, noise_level=0.0)
        for pair in pairs:
            outside = pair.mask == 0
            assert np.array_equal(
                pair.image_a[:, outside], pair.image_b[:, outside]
            )
            inside = pair.mask == 1
            assert np.abs(pair.image_a[:, inside] - pair.image_b[:, inside]).max() > 0

    def test_deterministic(self):
        first = generate_synthetic_change_pairs(3, 16, seed=9)
        second = generate_synthetic_change_pairs(3, 16, seed=9)
        for a, b in zip(first, second):
            assert np.array_equal(a.image_a, b.image_a)
            assert np.array_equal(a.image_b, b.image_b)
            assert np.array_equal(a.mask, b.mask)

    def test_seed_changes_content(self):
        a = generate_synthetic_change_pairs(1, 16, seed=0)[0]
        b = generate_synthetic_change_pairs(1, 16, seed=1)[0]
        assert not np.array_equal(a.image_a, b.image_a)

    def test_bad_parameters(self):
        with pytest.raises(ParameterError):
            generate_synthetic_change_pairs(0, 32, seed=0)
        with pytest.raises(ParameterError):
            generate_synthetic_change_pairs(1, 4, seed=0)

    def test_validate_rejects_mismatches(self):
        img = np.zeros((3, 8, 8), dtype=np.float32)
        mask = np.zeros((8, 8), dtype=np.uint8)
        with pytest.raises(ContractError):
            ChangePair(img, np.zeros((3, 8, 4), dtype=np.float32), mask, "p").validate()
        with pytest.raises(ContractError):
            ChangePair(img, img, np.zeros((4, 4), dtype=np.uint8), "p").validate()
        bad_mask = mask.copy()
        bad_mask[0, 0] = 2
        with pytest.raises(ContractError):
            ChangePair(img, img, bad_mask, "p").validate()


class TestChangePairIO:
    def test_roundtrip(self, change_pairs, tmp_path):
        root = save_change_pairs(change_pairs, tmp_path / "pairs")
        assert sorted(p.name for p in root.iterdir()) == [p.pair_id for p in change_pairs]
        for pair_dir in root.iterdir():
            assert {f.name for f in pair_dir.iterdir()} == {"a.png", "b.png", "mask.png"}
        loaded = load_change_pairs(root)
        assert [p.pair_id for p in loaded] == [p.pair_id for p in change_pairs]
        quantization = 0.5 / 255 + 1e-7
        for original, restored in zip(change_pairs, loaded):
            assert np.abs(original.image_a - restored.image_a).max() <= quantization
            assert np.abs(original.image_b - restored.image_b).max() <= quantization
            assert np.array_equal(original.mask, restored.mask)

    def test_missing_root(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_change_pairs(tmp_path / "nope")

    def test_empty_root(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(ManifestError):
            load_change_pairs(tmp_path / "empty")

    def test_missing_mask(self, change_pairs, tmp_path):
        root = save_change_pairs(change_pairs[:1], tmp_path / "pairs")
        (root / change_pairs[0].pair_id / "mask.png").unlink()
        with pytest.raises(ManifestError):
            load_change_pairs(root)

    def test_missing_image(self, change_pairs, tmp_path):
        root = save_change_pairs(change_pairs[:1], tmp_path / "pairs")
        (root / change_pairs[0].pair_id / "b.png").unlink()
        with pytest.raises(ManifestError):
            load_change_pairs(root)

    def test_wrong_mode_rejected(self, change_pairs, tmp_path):
        root = save_change_pairs(change_pairs[:1], tmp_path / "pairs")
        target = root / change_pairs[0].pair_id / "a.png"
        Image.new("L", (32, 32)).save(target)
        with pytest.raises(FormatError):
            load_change_pairs(root)


class TestChangeDecoder:
    def test_output_shape(self, encoder, change_pairs):
        decoder = ChangeDecoder(encoder.arch.widths, width=16)
        a = torch.from_numpy(np.stack([p.image_a for p in change_pairs[:2]]))
        b = torch.from_numpy(np.stack([p.image_b for p in change_pairs[:2]]))
        logits = decoder(difference_features(encoder, a, b))
        assert logits.shape == (2, 32, 32)

    @pytest.mark.parametrize("stages", [(0,), (3,), (1, 3), (0, 2, 3)])
    def test_stage_subsets(self, encoder, change_pairs, stages):
        decoder = ChangeDecoder(encoder.arch.widths, width=16, stages=stages)
        a = torch.from_numpy(np.stack([p.image_a for p in change_pairs[:2]]))
        b = torch.from_numpy(np.stack([p.image_b for p in change_pairs[:2]]))
        assert decoder(difference_features(encoder, a, b)).shape == (2, 32, 32)

    def test_invalid_stages(self, encoder):
        with pytest.raises(ConfigurationError):
            ChangeDecoder(encoder.arch.widths, stages=())
        with pytest.raises(ConfigurationError):
            ChangeDecoder(encoder.arch.widths, stages=(3, 1))
        with pytest.raises(ConfigurationError):
            ChangeDecoder(encoder.arch.widths, stages=(0, 4))

    def test_wrong_diff_count(self, encoder):
        decoder = ChangeDecoder(encoder.arch.widths, width=16)
        with pytest.raises(ContractError):
            decoder([torch.zeros(1, 16, 8, 8)])

    def test_difference_symmetry(self, encoder, change_pairs):
        a = torch.from_numpy(np.stack([p.image_a for p in change_pairs[:2]]))
        b = torch.from_numpy(np.stack([p.image_b for p in change_pairs[:2]]))
        forward = difference_features(encoder, a, b)
        backward = difference_features(encoder, b, a)
        for fwd, bwd in zip(forward, backward):
            torch.testing.assert_close(fwd, bwd, rtol=0, atol=0)
        decoder = ChangeDecoder(encoder.arch.widths, width=16)
        with torch.no_grad():
            torch.testing.assert_close(decoder(forward), decoder(backward), rtol=0, atol=0)


class TestChangeDetectTraining:
    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            ChangeDetectConfig(epochs=0).validate()
        with pytest.raises(ConfigurationError):
            ChangeDetectConfig(threshold=1.0).validate()
        with pytest.raises(ConfigurationError):
            ChangeDetectConfig(lr=0.0).validate()
        with pytest.raises(ConfigurationError):
            ChangeDetectConfig(stages=(1, 1)).validate()
        ChangeDetectConfig().validate()

    def test_encoder_frozen(self, encoder, change_pairs):
        before = {k: v.clone() for k, v in encoder.state_dict().items()}
        config = ChangeDetectConfig(epochs=2, batch_size=3, decoder_width=16, seed=0)
        change_detect_train(change_pairs, encoder, config)
        after = encoder.state_dict()
        for key, tensor in before.items():
            torch.testing.assert_close(after[key], tensor, rtol=0, atol=0)

    def test_deterministic(self, encoder, change_pairs):
        config = ChangeDetectConfig(epochs=2, batch_size=3, decoder_width=16, seed=3)
        first = change_detect_train(change_pairs, encoder, config)
        second = change_detect_train(change_pairs, encoder, config)
        for key, tensor in first.state_dict().items():
            torch.testing.assert_close(second.state_dict()[key], tensor, rtol=0, atol=0)

    def test_learns_above_chance(self, encoder, change_pairs):
        config = ChangeDetectConfig(epochs=8, batch_size=3, decoder_width=16, seed=0)
        decoder = change_detect_train(change_pairs, encoder, config)
        result, counts = evaluate_change_detection(change_pairs, encoder, decoder)
        assert counts.total == len(change_pairs) * 32 * 32
        assert result.f1 > 0.5

    def test_reaches_usable_f1_on_synthetic_pairs(self):
        torch.manual_seed(0)
        encoder = TileEncoder(get_architecture("tiny"))
        pairs = generate_synthetic_change_pairs(16, 32, seed=3)
        config = ChangeDetectConfig(epochs=30, batch_size=8, decoder_width=32, seed=0)
        decoder = change_detect_train(pairs, encoder, config)
        result, _ = evaluate_change_detection(pairs, encoder, decoder)
        assert result.f1 >= 0.8

    def test_threshold_validation(self, encoder, change_pairs):
        decoder = ChangeDecoder(encoder.arch.widths, width=16)
        with pytest.raises(ParameterError):
            evaluate_change_detection(change_pairs, encoder, decoder, threshold=0.0)

    def test_empty_pairs_rejected(self, encoder):
        with pytest.raises(ParameterError):
            change_detect_train([], encoder)


class TestProbeConfig:
    def test_defaults_valid(self):
        ProbeConfig().validate()

    def test_bad_mode(self):
        with pytest.raises(ConfigurationError):
            ProbeConfig(mode="probe").validate()

    def test_milestones_must_increase(self):
        with pytest.raises(ConfigurationError):
            ProbeConfig(milestones=(0.8, 0.6)).validate()
        with pytest.raises(ConfigurationError):
            ProbeConfig(milestones=(0.6, 0.6)).validate()
        with pytest.raises(ConfigurationError):
            ProbeConfig(milestones=(0.6, 1.0)).validate()
        with pytest.raises(ConfigurationError):
            ProbeConfig(milestones=(0.0, 0.8)).validate()

    def test_collapsing_epochs_rejected(self):
        with pytest.raises(ConfigurationError):
            ProbeConfig(epochs=2).validate()

    def test_milestone_epochs(self):
        assert ProbeConfig(epochs=10).milestone_epochs(10) == (6, 8)
        assert ProbeConfig(epochs=5).milestone_epochs(5) == (3, 4)

    def test_gamma_bounds(self):
        with pytest.raises(ConfigurationError):
            ProbeConfig(gamma=1.0).validate()
        with pytest.raises(ConfigurationError):
            ProbeConfig(gamma=0.0).validate()


@pytest.fixture(scope="module")
def striped_images():
    # two texture classes that any conv stack separates: horizontal vs vertical stripes
    rng = np.random.default_rng(23)
    images, labels = [], []
    for label in (0, 1):
        for _ in range(12):
            freq = rng.uniform(2, 5)
            phase = rng.uniform(0, 2 * np.pi)
            ramp = np.linspace(0, 2 * np.pi * freq, 16)
            wave = 0.5 + 0.4 * np.sin(ramp + phase)
            plane = np.tile(wave, (16, 1)) if label else np.tile(wave[:, None], (1, 16))
            img = np.stack([plane] * 3) + rng.normal(0, 0.02, (3, 16, 16))
            images.append(np.clip(img, 0, 1).astype(np.float32))
            labels.append(label)
    return torch.from_numpy(np.stack(images)), torch.tensor(labels)


class TestProbeTraining:
    def test_linear_probe_learns_and_freezes(self, encoder, striped_images):
        images, labels = striped_images
        before = {k: v.clone() for k, v in encoder.state_dict().items()}
        config = ProbeConfig(epochs=20, batch_size=8, lr=1e-2, seed=0)
        result = probe_train(images, labels, encoder, n_classes=2, config=config)
        for key, tensor in before.items():
            torch.testing.assert_close(encoder.state_dict()[key], tensor, rtol=0, atol=0)
        report = evaluate_probe(images, labels, encoder, result.head)
        assert report["metric"] == "accuracy"
        assert report["value"] >= 0.9
        assert result.losses[-1] < result.losses[0]

    def test_lr_trace_two_drops(self, encoder, striped_images):
        images, labels = striped_images
        config = ProbeConfig(epochs=10, batch_size=8, lr=1e-3, seed=0)
        result = probe_train(images, labels, encoder, n_classes=2, config=config)
        trace = result.lr_trace
        assert len(trace) == 10
        drops = [
            (i, trace[i] / trace[i - 1]) for i in range(1, len(trace)) if trace[i] != trace[i - 1]
        ]
        assert [i for i, _ in drops] == [6, 8]
        for _, ratio in drops:
            assert ratio == pytest.approx(0.1, rel=1e-12)

    def test_linear_probe_deterministic(self, encoder, striped_images):
        images, labels = striped_images
        config = ProbeConfig(epochs=4, batch_size=8, seed=7, milestones=(0.5, 0.75))
        first = probe_train(images, labels, encoder, n_classes=2, config=config)
        second = probe_train(images, labels, encoder, n_classes=2, config=config)
        torch.testing.assert_close(second.head.weight, first.head.weight, rtol=0, atol=0)
        torch.testing.assert_close(second.head.bias, first.head.bias, rtol=0, atol=0)

    def test_fine_tune_updates_encoder(self, striped_images):
        torch.manual_seed(1)
        local = TileEncoder(get_architecture("tiny"))
        images, labels = striped_images
        before = {k: v.clone() for k, v in local.state_dict().items()}
        config = ProbeConfig(mode="fine_tune", epochs=5, batch_size=8, seed=0)
        probe_train(images, labels, local, n_classes=2, config=config)
        changed = any(
            not torch.equal(local.state_dict()[key], tensor)
            for key, tensor in before.items()
            if local.state_dict()[key].dtype.is_floating_point
        )
        assert changed

    def test_multi_label_path(self, encoder, striped_images):
        images, labels = striped_images
        indicator = torch.zeros(labels.shape[0], 3)
        indicator[torch.arange(labels.shape[0]), labels] = 1.0
        indicator[: 4, 2] = 1.0  # give the third class some positives
        config = ProbeConfig(epochs=5, batch_size=8, seed=0)
        result = probe_train(images, indicator, encoder, n_classes=3, config=config)
        report = evaluate_probe(images, indicator, encoder, result.head)
        assert report["metric"] == "map"
        assert 0.0 <= report["value"] <= 1.0

    def test_label_arity_mismatches(self, encoder, striped_images):
        images, labels = striped_images
        with pytest.raises(ContractError):
            probe_train(images, labels, encoder, n_classes=1)  # class id 1 out of range
        indicator = torch.zeros(labels.shape[0], 4)
        with pytest.raises(ContractError):
            probe_train(images, indicator, encoder, n_classes=3)
        with pytest.raises(ContractError):
            probe_train(images, torch.zeros(labels.shape[0], 2, 2), encoder, n_classes=2)

    def test_count_mismatch(self, encoder, striped_images):
        images, labels = striped_images
        with pytest.raises(ContractError):
            probe_train(images[:-1], labels, encoder, n_classes=2)


class TestDatasetHelpers:
    def test_tiles_to_tensor(self, scene_dataset):
        stacked = tiles_to_tensor(scene_dataset)
        assert stacked.shape == (18, 3, 16, 16)
        assert stacked.dtype == torch.float32

    def test_tiles_to_tensor_mixed_shapes(self):
        tiles = [
            SceneTile(np.zeros((3, 8, 8), dtype=np.float32), "s0", "t0"),
            SceneTile(np.zeros((3, 16, 16), dtype=np.float32), "s0", "t1"),
        ]
        with pytest.raises(ContractError):
            tiles_to_tensor(TileDataset(tiles))

    def test_scene_label_array(self, scene_dataset):
        labels, vocabulary = scene_label_array(scene_dataset)
        assert vocabulary == tuple(sorted(set(scene_dataset.scene_ids)))
        assert labels.shape == (18,)
        for label, scene_id in zip(labels, scene_dataset.scene_ids):
            assert vocabulary[label] == scene_id


def naive_high_pass(channel: np.ndarray) -> np.ndarray:
    height, width = channel.shape
    out = np.zeros_like(channel)
    for i in range(height):
        for j in range(width):
            up = channel[max(i - 1, 0), j]
            down = channel[min(i + 1, height - 1), j]
            left = channel[i, max(j - 1, 0)]
            right = channel[i, min(j + 1, width - 1)]
            out[i, j] = 4 * channel[i, j] - up - down - left - right
    return out


class TestHighPass:
    def test_constant_input_exactly_zero(self):
        for value in (0.0, 0.37, 1.0):
            constant = torch.full((2, 3, 16, 16), value)
            response = high_pass(constant)
            assert response.abs().max().item() == 0.0

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            array = rng.random((2, 3, 8, 8))
            response = high_pass(torch.from_numpy(array)).numpy()
            for b in range(2):
                for c in range(3):
                    expected = naive_high_pass(array[b, c])
                    np.testing.assert_allclose(response[b, c], expected, rtol=1e-12, atol=1e-12)

    def test_three_dim_input(self):
        rng = np.random.default_rng(5)
        array = rng.random((3, 8, 8)).astype(np.float32)
        single = high_pass(torch.from_numpy(array))
        batched = high_pass(torch.from_numpy(array)[None])[0]
        torch.testing.assert_close(single, batched, rtol=0, atol=0)

    def test_bad_rank_rejected(self):
        with pytest.raises(ParameterError):
            high_pass(torch.zeros(8, 8))

    def test_energy_positive_on_noise(self, encoder):
        noisy = torch.rand(2, 3, 16, 16)
        assert high_frequency_energy(noisy) > 0.0
        assert shallow_feature_energy(encoder, noisy) > 0.0


class TestPCA:
    def test_shape_and_determinism(self):
        rng = np.random.default_rng(41)
        embeddings = rng.random((20, 8))
        first = pca_2d(embeddings)
        second = pca_2d(embeddings)
        assert first.shape == (20, 2)
        np.testing.assert_array_equal(first, second)

    def test_variance_ordering(self):
        rng = np.random.default_rng(43)
        embeddings = rng.random((50, 6)) * np.array([10, 5, 1, 1, 1, 1])
        projected = pca_2d(embeddings)
        assert projected[:, 0].var() >= projected[:, 1].var()

    def test_too_few_rows(self):
        with pytest.raises(ParameterError):
            pca_2d(np.zeros((1, 4)))


class TestInspectFeatures:
    def test_writes_artifacts(self, encoder, scene_dataset, tmp_path):
        images = tiles_to_tensor(scene_dataset)[:4]
        labels, _ = scene_label_array(scene_dataset)
        artifacts = inspect_features(encoder, images, tmp_path, labels=labels[:4])
        assert set(artifacts) == {"high_frequency", "embedding_scatter"}
        for path in artifacts.values():
            assert path.exists() and path.stat().st_size > 0
        assert (tmp_path / "artifacts.json").exists()

    def test_grid_has_one_row_per_image(self, encoder, scene_dataset, tmp_path):
        for n in (1, 3):
            out = tmp_path / f"n{n}"
            images = tiles_to_tensor(scene_dataset)[:n]
            artifacts = inspect_features(encoder, images, out)
            with Image.open(artifacts["high_frequency"]) as im:
                width, height = im.size
            assert height == 250 * n
            assert width == 750

    def test_confusion_requires_classifier(self, encoder, scene_dataset, tmp_path):
        images = tiles_to_tensor(scene_dataset)[:4]
        labels, _ = scene_label_array(scene_dataset)
        with pytest.raises(ParameterError):
            inspect_features(encoder, images, tmp_path, labels=labels[:4], confusion=True)
        with pytest.raises(ParameterError):
            inspect_features(
                encoder,
                images,
                tmp_path,
                classifier=torch.nn.Linear(encoder.out_channels, 3),
                confusion=True,
            )

    def test_confusion_written_with_classifier(self, encoder, scene_dataset, tmp_path):
        images = tiles_to_tensor(scene_dataset)[:6]
        labels, _ = scene_label_array(scene_dataset)
        torch.manual_seed(0)
        head = torch.nn.Linear(encoder.out_channels, 3)
        artifacts = inspect_features(
            encoder, images, tmp_path, labels=labels[:6], classifier=head, confusion=True
        )
        assert "confusion_matrix" in artifacts
        assert artifacts["confusion_matrix"].exists()

    def test_empty_batch_rejected(self, encoder, tmp_path):
        with pytest.raises(ParameterError):
            inspect_features(encoder, torch.zeros(0, 3, 16, 16), tmp_path)

    def test_pooled_features_shape(self, encoder, scene_dataset):
        images = tiles_to_tensor(scene_dataset)[:3]
        feats = pooled_features(encoder, images)
        assert feats.shape == (3, encoder.out_channels)
