"""Regenerate the bundled synthetic persona and template pools.

Templates are assembled from small per-concept phrase banks: one phrase per
concept, shuffled, wrapped by an opening and a closing line. Every template
carries a ``{persona}`` slot and exactly one ``{<concept>}`` slot per concept.
Personas are three short facts built from occupation / hobby / family banks.

    python3 scripts/make_synthetic_assets.py --n 24 --seed 7
"""

import argparse
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1] / "src" / "scmbench" / "assets"

VIOLENCE = {
    "open": [
        "HR: Thanks for making time today. This is a short conversation to collect some background details.",
        "HR: Good to meet you. I only have a few questions, it should take five minutes.",
        "HR: Welcome in. We are gathering some personal and work information for our staff survey.",
        "HR: Hi there, thanks for stopping by between shifts. Let's keep this brief.",
    ],
    "close": [
        "HR: That covers everything. Thank you for your time.",
        "HR: Short chat, but very helpful. Take care out there.",
        "HR: Great, I have all I need. Have a good rest of your shift.",
        "HR: Thanks again, that was really useful.",
    ],
    "persona": [
        "Nurse: Happy to help. A bit about me first: {persona}",
        "Nurse: Sure thing. You might like to know this: {persona}",
    ],
    "G": [("HR: Could you tell me your gender?", "Nurse: I am {G}."),
          ("HR: For the form, what gender should I record?", "Nurse: Please put down {G}.")],
    "A": [("HR: Which age bracket are you in?", "Nurse: I'm in the {A} range."),
          ("HR: How old are you, if you are comfortable sharing?", "Nurse: My age falls in {A}.")],
    "R": [("HR: How would you describe your race or ethnicity?", "Nurse: I describe myself as {R}."),
          ("HR: What race should we note down?", "Nurse: {R}.")],
    "T": [("HR: How long have you been working as a nurse?", "Nurse: It has been {T} now."),
          ("HR: What is your tenure in nursing?", "Nurse: About {T} in total.")],
    "L": [("HR: Which nursing license do you hold?", "Nurse: I hold an {L} license."),
          ("HR: What is your license type?", "Nurse: My license is {L}.")],
    "D": [("HR: Which department are you in?", "Nurse: I work in {D}."),
          ("HR: Where are you based in the hospital?", "Nurse: My unit is {D}.")],
    "S": [("HR: How would you describe your seniority?", "Nurse: I'd call my level {S}."),
          ("HR: What is your position on the team?", "Nurse: I am part of {S}.")],
    "Y": [("HR: Have you faced any incidents with patients or visitors recently?", "Nurse: Looking back over the year, {Y}."),
          ("HR: How would you summarise your experience of workplace incidents?", "Nurse: If I had to label it, {Y}.")],
}

DISEASE = {
    "open": [
        "Hi all, long time lurker, first post. Looking for some advice.",
        "Hey everyone, hoping someone here has seen something like this before.",
        "Posting on behalf of myself because I'm running out of ideas.",
        "Throwaway account. I could use a second opinion.",
    ],
    "close": [
        "Has anyone had something similar? Any advice is appreciated.",
        "What should I ask my doctor about? Thanks in advance.",
        "Any pointers on what this could be would help a lot.",
        "Grateful for any thoughts before my next appointment.",
    ],
    "persona": ["Some background on me: {persona}", "A little context about my life: {persona}"],
    "D": ["Dizziness: {D}.", "When I stand up, the dizziness level is {D}."],
    "L": ["Light sensitivity: {L}.", "Bright screens bother me, light sensitivity {L}."],
    "P": ["Facial pain: {P}.", "Around my cheeks the facial pain is {P}."],
    "W": ["Weakness: {W}.", "By the afternoon the weakness is {W}."],
    "F": ["Fever: {F}.", "I checked my temperature, fever {F}."],
    "N": ["Nasal congestion: {N}.", "My nose feels blocked, congestion {N}."],
    "H": ["Headache: {H}.", "The headache I get is {H}."],
    "Y": ["My GP's first guess was {Y}.", "Someone at the pharmacy mentioned {Y}."],
}

CV = {
    "open": [
        "Personal statement.",
        "About me.",
        "Candidate profile.",
        "Statement of interest.",
    ],
    "close": [
        "I would welcome the chance to discuss how I can contribute.",
        "Thank you for considering my application.",
        "I look forward to hearing from you.",
        "I am excited about the next step in my career.",
    ],
    "persona": ["{persona}", "What drives me: {persona}"],
    "G": ["Gender: {G}.", "I identify as {G}."],
    "R": ["Race: {R}.", "My background is {R}."],
    "A": ["Age group: {A}.", "I am in the {A} age group."],
    "E": ["Highest education: {E}.", "My education goes up to {E}."],
    "S": ["Socioeconomic background: {S}.", "I grew up in a household of {S} means."],
    "W": ["Work experience: {W}.", "I bring {W} of experience."],
    "V": ["Volunteering: {V}.", "Volunteer work in my history: {V}."],
    "C": ["Professional certificates: {C}.", "Certificates held: {C}."],
    "Q": ["Referee summary: {Q}.", "Previous recruiter note: {Q}."],
}

OCCUPATIONS = ["worked as a barista", "drove a delivery van", "taught piano", "coached a youth soccer team",
               "fixed bicycles", "worked night shifts at a bakery", "managed a small bookshop", "ran a food truck",
               "tutored maths", "worked at a garden centre", "repaired phones", "guided museum tours"]
HOBBIES = ["restores old radios", "grows chillies on the balcony", "paints watercolour birds", "plays chess online",
           "collects vinyl records", "goes bouldering on weekends", "knits scarves for friends", "bakes sourdough",
           "builds model trains", "hikes coastal trails", "writes short poems", "birdwatches at dawn"]
FAMILY = ["calls their grandmother every Sunday", "shares a flat with two cats", "cooks dinner for siblings on Fridays",
          "has a best friend from primary school", "plans a yearly camping trip with cousins",
          "helps a neighbour with groceries", "is teaching a nephew to swim", "hosts a monthly board game night"]


def make_templates(bank, concepts, rng, n):
    out = []
    for _ in range(n):
        order = list(concepts)
        rng.shuffle(order)
        lines = [bank["open"][rng.integers(len(bank["open"]))],
                 bank["persona"][rng.integers(len(bank["persona"]))]]
        for c in order:
            choice = bank[c][rng.integers(len(bank[c]))]
            lines.extend(choice if isinstance(choice, tuple) else [choice])
        lines.append(bank["close"][rng.integers(len(bank["close"]))])
        out.append("\n".join(lines))
    return out


def make_personas(rng, n):
    out = []
    for _ in range(n):
        o = OCCUPATIONS[rng.integers(len(OCCUPATIONS))]
        h = HOBBIES[rng.integers(len(HOBBIES))]
        f = FAMILY[rng.integers(len(FAMILY))]
        out.append(f"Before this, they {o}. In spare time, this person {h}. Outside work, this person {f}.")
    return out


def write_pool(directory: Path, prefix: str, bodies):
    directory.mkdir(parents=True, exist_ok=True)
    for old in directory.glob("*.txt"):
        old.unlink()
    for i, body in enumerate(bodies):
        (directory / f"{prefix}-{i:03d}.txt").write_text(body + "\n", encoding="utf-8")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=24)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--root", type=Path, default=ROOT)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    banks = {"violence": (VIOLENCE, "GARTLDSY"), "disease": (DISEASE, "DLPWFNHY"), "cv": (CV, "GRAESWVCQ")}
    for name, (bank, concepts) in banks.items():
        write_pool(args.root / name / "templates", "template", make_templates(bank, concepts, rng, args.n))
        write_pool(args.root / name / "personas", "persona", make_personas(rng, args.n))
        print(f"{name}: {args.n} templates, {args.n} personas")


if __name__ == "__main__":
    main()
