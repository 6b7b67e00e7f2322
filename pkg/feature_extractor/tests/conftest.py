"""Tiny locally-constructed encoder checkpoints so tests never touch the
network: a one-layer BERT with a 16-token wordpiece vocabulary and a
one-layer ViT over 32x32 images."""

import numpy as np
import pytest
import torch
from PIL import Image
from transformers import (
    BertConfig,
    BertModel,
    BertTokenizer,
    ViTConfig,
    ViTImageProcessor,
    ViTModel,
)

WORDPIECES = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "a", "the", "red", "blue", "green", "cat", "dog", "bird", "runs", "sits", "flies",
]


@pytest.fixture(scope="session")
def text_model_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny-bert")
    (out / "vocab.txt").write_text("\n".join(WORDPIECES) + "\n")
    torch.manual_seed(0)
    config = BertConfig(
        vocab_size=len(WORDPIECES), hidden_size=16, num_hidden_layers=1,
        num_attention_heads=2, intermediate_size=32, max_position_embeddings=32,
    )
    BertModel(config).save_pretrained(out)
    BertTokenizer(str(out / "vocab.txt"), model_max_length=32).save_pretrained(out)
    return str(out)


@pytest.fixture(scope="session")
def image_model_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny-vit")
    torch.manual_seed(1)
    config = ViTConfig(
        image_size=32, patch_size=16, hidden_size=16, num_hidden_layers=1,
        num_attention_heads=2, intermediate_size=32, num_channels=3,
    )
    ViTModel(config).save_pretrained(out)
    ViTImageProcessor(size={"height": 32, "width": 32}).save_pretrained(out)
    return str(out)


def save_png(path, seed):
    rng = np.random.default_rng(seed)
    pixels = (rng.random((24, 24, 3)) * 255).astype("uint8")
    Image.fromarray(pixels).save(path)
