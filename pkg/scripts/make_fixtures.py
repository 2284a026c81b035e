"""Regenerate the bundled fixtures under src/buglistener/data/fixtures/.

    python scripts/make_fixtures.py

Everything is drawn from a fixed seed, so reruns reproduce the committed files.
"""

import json
import os
import random
from datetime import datetime, timedelta, timezone

OUT = os.path.join(os.path.dirname(__file__), "..", "src", "buglistener", "data", "fixtures")

COMPONENTS = ["router", "datepicker", "form builder", "cli", "dev server", "build", "compiler",
              "test runner", "http client", "image loader", "theme", "cache", "plugin", "bundler"]
SYMPTOMS = ["crashes with a null pointer exception", "throws a type error", "fails with an error",
            "shows a blank page", "freezes and never returns", "reports a stack overflow",
            "breaks with a segmentation fault", "crashes immediately", "throws an undefined error",
            "fails to load and logs an exception"]
TRIGGERS = ["when I click the save button", "after upgrading to 2.3.1", "on startup",
            "when the window is resized", "whenever I run the tests", "after I reload the page",
            "as soon as I import the module", "when the list is empty"]
EXPECTED = ["it should render the page normally", "I expect it to save the file without errors",
            "it is supposed to return an empty list", "it should keep working after the upgrade",
            "I would expect the tests to pass", "the page is supposed to show the form",
            "it should just ignore the missing value", "I expect the build to succeed"]
STEPS = ["first create a new project with the cli", "then open the settings page",
         "click the save button twice", "run npm install and then npm start",
         "go to the dashboard and open the menu", "add an empty list to the config",
         "start the dev server and reload the page", "type a date into the picker and press enter"]
OTHER = ["i am using ubuntu with node 14", "my laptop runs windows ten", "this is my first project with it",
         "not sure if i am doing something wrong", "i have been stuck on this all day",
         "we use it at work for an internal tool", "the rest of the app works fine",
         "i searched the docs but found nothing"]
QUESTIONS = ["how do i configure the {c} for a monorepo", "is there a guide for using the {c} with typescript",
             "what is the recommended way to structure the {c}", "can someone explain how the {c} handles routing",
             "where can i find examples for the {c}", "does the {c} support lazy loading",
             "which option controls the {c} output folder", "is it possible to extend the {c} with plugins"]
NBR_REPLIES = ["you can check the official docs, they have a section on that",
               "have a look at the examples folder in the repo",
               "we use a shared config file for that and it works nicely",
               "there is a tutorial on the website that walks through it",
               "i usually just follow the style guide",
               "the option is called outDir in the config"]
BR_REPLIES = ["can you share a minimal reproduction", "that looks like a bug, please open an issue",
              "i can reproduce the crash on my machine too", "which version are you on",
              "same error here after the upgrade", "please post the full stack trace"]
ACKS = ["ok", "thanks", "cool", "sure", "got it", "nice"]
USERS = ["alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi", "ivan", "judy", "mallory", "oscar"]


def ts(base, minutes):
    return (base + timedelta(minutes=minutes)).isoformat().replace("+00:00", "Z")


def br_dialog(rng, did, base, project, users):
    reporter, helper = rng.sample(users, 2)
    c = rng.choice(COMPONENTS)
    utts = [
        (reporter, f"hi guys, the {c} {rng.choice(SYMPTOMS)} {rng.choice(TRIGGERS)}. {rng.choice(EXPECTED)}."),
        (helper, rng.choice(BR_REPLIES)),
        (reporter, f"{rng.choice(STEPS)}. {rng.choice(STEPS)}. the {c} {rng.choice(SYMPTOMS)}."),
        (helper, rng.choice(BR_REPLIES)),
    ]
    return make_dialog(did, base, project, "BR", utts, rng)


def nbr_dialog(rng, did, base, project, users):
    asker, helper = rng.sample(users, 2)
    c = rng.choice(COMPONENTS)
    utts = [
        (asker, rng.choice(QUESTIONS).format(c=c) + "?"),
        (helper, rng.choice(NBR_REPLIES)),
        (asker, rng.choice(ACKS)),
    ]
    if rng.random() < 0.5:
        utts.append((helper, rng.choice(NBR_REPLIES)))
    return make_dialog(did, base, project, "NBR", utts, rng)


def make_dialog(did, base, project, label, utts, rng):
    records, links = [], []
    minute = 0
    for k, (author, text) in enumerate(utts):
        uid = f"{did}-u{k}"
        rec = {"id": uid, "timestamp": ts(base, minute), "author": author, "text": text}
        if k:
            rec["reply_to_ids"] = [f"{did}-u{k - 1}"]
            links.append([uid, f"{did}-u{k - 1}"])
        records.append(rec)
        minute += rng.randint(1, 3)
    return {"id": f"{did}-u0", "project": project, "label": label, "utterances": records, "reply_links": links}


def write_jsonl(name, rows):
    with open(os.path.join(OUT, name), "w") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=False) + "\n")


def sentence_rows(rng, n_per_class, prefix):
    rows = []
    makers = {
        "OB": lambda: f"the {rng.choice(COMPONENTS)} {rng.choice(SYMPTOMS)} {rng.choice(TRIGGERS)}",
        "EB": lambda: rng.choice(EXPECTED),
        "SR": lambda: f"{rng.choice(STEPS)} and {rng.choice(STEPS)}",
        "OTHER": lambda: rng.choice(OTHER),
    }
    for label, n in n_per_class.items():
        for _ in range(n):
            rows.append({"text": makers[label](), "label": label})
    rng.shuffle(rows)
    return [{"id": f"{prefix}{k}", **r} for k, r in enumerate(rows)]


def interleave(dialogs):
    """Flatten dialogs into one chat log with overlapping time ranges."""
    utts = [u for d in dialogs for u in d["utterances"]]
    return sorted(utts, key=lambda u: (u["timestamp"], u["id"]))


def main():
    os.makedirs(OUT, exist_ok=True)
    rng = random.Random(20220525)
    base = datetime(2020, 6, 1, 9, 0, tzinfo=timezone.utc)

    bri = []
    for k in range(40):
        maker = br_dialog if k % 2 == 0 else nbr_dialog
        bri.append(maker(rng, f"syn{k:02d}", base + timedelta(hours=k), ["alpha", "beta"][k % 4 // 2], USERS))
    write_jsonl("bri_synthetic.jsonl", bri)

    write_jsonl("brs_external.jsonl", sentence_rows(rng, {"OB": 60, "EB": 40, "SR": 60, "OTHER": 40}, "ext"))
    write_jsonl("brs_chat.jsonl", sentence_rows(rng, {"OB": 15, "EB": 10, "SR": 13, "OTHER": 12}, "chat"))

    # end-to-end pipeline: two projects, five dialogs each, interleaved in time
    labels = []
    for p, project in enumerate(["angular", "docker"]):
        dialogs = []
        for k in range(5):
            did = f"{project[:3]}{k}"
            start = base + timedelta(days=10 + p, minutes=4 * k)
            maker = br_dialog if k in (0, 3) else nbr_dialog
            dialogs.append(maker(rng, did, start, project, USERS))
            labels.append({"dialog_id": f"{did}-u0", "label": dialogs[-1]["label"]})
        log = interleave(dialogs)
        gold = [{"replier_id": a, "replied_id": b} for d in dialogs for a, b in d["reply_links"]]
        for u in log:
            u.pop("reply_to_ids", None)
        write_jsonl(f"chat_{project}.jsonl", log)
        write_jsonl(f"gold_links_{project}.jsonl", gold)
    write_jsonl("labels.jsonl", labels)


if __name__ == "__main__":
    main()
