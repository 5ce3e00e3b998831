CLASS_NAMES_3 = ("CN", "MCI", "AD")
CLASS_NAMES_2 = ("CN", "AD")

SPECIAL_TOKENS = ("<pad>", "<unk>", "<bos>", "<eos>")
PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3

# Canonical summary template sections, in template order
SUMMARY_SECTIONS = (
    "Basic Information",
    "Medical History and Neurological Assessment",
    "Physical status",
    "Daily Behavior",
    "Language proficiency",
)
UNRECORDED_MARKER = "unrecorded"

# Class-correlated phrases used by the synthetic summary generator
CLASS_KEYWORDS = {
    "CN": {
        "Medical History and Neurological Assessment": [
            "memory intact on delayed recall",
            "normal neurological examination",
            "no cognitive complaints reported",
        ],
        "Daily Behavior": [
            "manages finances independently",
            "drives and shops without assistance",
        ],
        "Language proficiency": [
            "fluent speech with rich vocabulary",
            "naming and comprehension preserved",
        ],
    },
    "MCI": {
        "Medical History and Neurological Assessment": [
            "mild forgetfulness noted by family",
            "subtle deficits on delayed recall",
            "subjective memory complaints",
        ],
        "Daily Behavior": [
            "occasionally misplaces objects",
            "needs reminders for appointments",
        ],
        "Language proficiency": [
            "occasional word finding pauses",
            "mostly fluent with mild hesitation",
        ],
    },
    "AD": {
        "Medical History and Neurological Assessment": [
            "severe memory loss with disorientation",
            "marked impairment on recall and orientation",
            "progressive cognitive decline",
        ],
        "Daily Behavior": [
            "requires help with daily activities",
            "wanders and gets lost in familiar places",
        ],
        "Language proficiency": [
            "frequent anomia and empty speech",
            "impaired comprehension of commands",
        ],
    },
}

# Class-neutral filler
NEUTRAL_PHRASES = {
    "Basic Information": [
        "retired teacher living with spouse",
        "former clerk living alone",
        "retired engineer with two children",
        "farmer living with family",
    ],
    "Medical History and Neurological Assessment": [
        "history of hypertension",
        "type two diabetes under control",
        "no history of stroke",
    ],
    "Physical status": [
        "gait steady",
        "blood pressure within normal range",
        "mild hearing loss",
        "vision corrected with glasses",
    ],
    "Daily Behavior": [
        "walks daily in the neighborhood",
        "sleeps about seven hours",
    ],
    "Language proficiency": [
        "native speaker",
        "reads the newspaper",
    ],
}

DEFAULT_CONFOUND_TOKEN = "outpatient"
DEFAULT_PLANTED_TOKEN = "hallmark"
