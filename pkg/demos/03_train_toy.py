# Train the full model on the bundled 32-sentence corpus, then tag a sentence.
# Takes under a minute on one core; the run directory goes to a temp folder.
import json
import os
import tempfile

import intnet
from intnet.cli import main
from intnet.data import TaggedSentence
from intnet.tagger import load_checkpoint

run = tempfile.mkdtemp(prefix="intnet-toy-")
config = os.path.join(intnet.FIXTURES, "toy.ini")
main(["train", "--config", config, "--run-dir", run])

# %% history: one JSON line per epoch
with open(os.path.join(run, "history.jsonl")) as fh:
    history = [json.loads(line) for line in fh]
for h in history[::5]:
    print(f"epoch {h['epoch']:3d}  loss {h['train_loss']:.3f}  dev f1 {h['dev_f1']:.3f}")

# %% the checkpoint restores vocabularies, tag set and weights
model, extra = load_checkpoint(os.path.join(run, "checkpoint.zip"))
sent = TaggedSentence(["Obama", "visited", "Berlin", "."], ["O"] * 4)
print(list(zip(sent.tokens, model.predict([sent])[0])))
