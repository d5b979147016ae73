"""Builds a tiny local encoder checkpoint so tests never touch the network.

Heavy imports live inside the fixture so that a checkout without the
extractor's dependencies skips this suite instead of failing collection.
"""

import pytest

WORDS = ["the", "cat", "sat", "on", "mat", "a", "dog", "ran", "fast",
         "slow", "river", "stone", "bird", "flew", "over", "tall", "tree"]
HIDDEN = 32
MAX_LEN = 16  # deliberately small so overflow splitting is testable


@pytest.fixture(scope="session")
def checkpoint(tmp_path_factory):
    torch = pytest.importorskip("torch")
    pytest.importorskip("tokenizers")
    pytest.importorskip("transformers")
    from tokenizers import (Tokenizer, models, normalizers, pre_tokenizers,
                            processors)
    from transformers import BertConfig, BertModel, PreTrainedTokenizerFast

    path = tmp_path_factory.mktemp("model") / "tiny"
    path.mkdir()
    vocab = {w: i for i, w in enumerate(
        ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + WORDS)}
    tk = Tokenizer(models.WordPiece(vocab=vocab, unk_token="[UNK]"))
    tk.normalizer = normalizers.BertNormalizer(lowercase=True)
    tk.pre_tokenizer = pre_tokenizers.BertPreTokenizer()
    tk.post_processor = processors.TemplateProcessing(
        single="[CLS] $A [SEP]",
        pair="[CLS] $A [SEP] $B [SEP]",
        special_tokens=[("[CLS]", vocab["[CLS]"]), ("[SEP]", vocab["[SEP]"])],
    )
    tokenizer = PreTrainedTokenizerFast(
        tokenizer_object=tk, unk_token="[UNK]", pad_token="[PAD]",
        cls_token="[CLS]", sep_token="[SEP]", mask_token="[MASK]",
        model_max_length=MAX_LEN,
    )
    tokenizer.save_pretrained(str(path))

    torch.manual_seed(0)
    config = BertConfig(
        vocab_size=len(vocab), hidden_size=HIDDEN, num_hidden_layers=2,
        num_attention_heads=2, intermediate_size=37,
        max_position_embeddings=MAX_LEN,
    )
    BertModel(config).save_pretrained(str(path))
    return path
