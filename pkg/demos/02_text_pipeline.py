"""From raw tweet text to padded, masked index sequences."""

from panemo import textprep as tp

tweets = [
    "Soooo happy today!!! #blessed",
    "ugh @boss made me stay late again... see http://example.com/rant",
    "The best revenge is massive success.",
]

token_lists = [tp.tokenize(t) for t in tweets]
for raw, toks in zip(tweets, token_lists):
    print(f"{raw!r}\n  -> {toks}")

vocab = tp.build_vocabulary(token_lists, min_count=1)
print(f"\nvocabulary size (incl. PAD/UNK): {len(vocab)}")

for toks in token_lists:
    indices, mask = tp.encode(toks, vocab, max_len=12)
    print(f"indices {indices}\nmask    {mask}")

# unknown words at inference time fall back to UNK (index 1)
indices, _ = tp.encode(["wholly", "unseen", "words"], vocab, max_len=4)
print(f"\nOOV encoding: {indices}")
