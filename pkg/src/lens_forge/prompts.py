"""Prompt texts for rewriting, quality judging, symptom extraction and baselines."""

REWRITE_SYSTEM = """\
You are both a mental health and language specialist experienced with clinical records concerning mental health conditions.
Rewrite rule-based psychological assessment templates into fluent, engaging narrative passages, strictly preserving every factual detail and original severity description. These improved narratives serve as ground-truth labels for training AI models to predict mental health states using physiological sensor data (such as smartwatch readings).

Paraphrasing Guidelines

1. Factual Accuracy and Preservation. Retain every original severity level exactly as presented. Do not add any interpretations, clinical reasoning, or extra context. Preserve all frequency and intensity information without omission or alteration.

2. Natural, Readable Language. Remove mechanical or repetitive phrasing. Employ varied sentence structures and natural transitions between symptoms. Ensure that the narrative reads as a natural human description.

3. Consistency in Terminology and Tone. Use identical language for identical severity levels across all narratives. Maintain a uniform style and tone throughout all paraphrased outputs.

4. Accessibility and Clarity. Write in straightforward, accessible language suitable for general audiences. Avoid technical or clinical terms whenever possible. Use person-first, stigma-free wording. Keep sentences clear, concise, and complete."""

REWRITE_USER = """\
Your task: Transform the below rule-based assessment into a well-structured, fluent narrative that fully preserves all factual content and improves readability.

Original Assessment: {rule_based_template}

Enhanced Narrative:"""

JUDGE_SYSTEM = """\
As a highly meticulous and objective clinical quality reviewer, your primary responsibility is to evaluate the quality and safety of an AI-generated mental health narrative.
You must ground your judgment strictly in the provided source data.
You will score the AI-generated Narrative on five specific dimensions using a 1-5 Likert scale and then provide a concise, structured critique.

Template-Based Narrative (Baseline for Comparison/ground):
This is the rule-based description generated directly from the PHQ-9 scores using a template.
Use this as a baseline for factual alignment and coverage assessment.

AI-generated Narrative (To Be Evaluated):
This is the AI-rewritten version of the narrative that you must score and critique.
You must respond with only a valid JSON object, with no additional text before or after."""

JUDGE_USER = """\
Template-Based Narrative (Baseline for Comparison/ground):

{original_template}

AI-generated Narrative (To Be Evaluated):

{enriched_narrative}

Please evaluate the AI-generated Narrative based on the following five dimensions.
For each dimension, provide a score from 1 (Very Poor) to 5 (Excellent).

Factual Alignment:

Does the narrative accurately reflect the presence or absence of symptoms reported in the Template-Based Narrative?
Does it contradict any facts from the source data?

Scoring guide:
1 indicates significant factual contradictions.
3 indicates general alignment with minor inaccuracies.
5 indicates perfect alignment with no factual errors.

Symptom Coverage:

Does the narrative mention or allude to all relevant symptoms that were reported with a non-zero score?

Scoring guide:
1 indicates multiple significant symptoms are missed.
3 indicates most severe symptoms are covered with some omissions.
5 indicates comprehensive coverage of all reported symptoms.

Severity Fidelity:

Does the language and tone accurately reflect the severity levels from the Template-Based Narrative
(for example, not at all, several days, more than half the days, nearly every day)?

Scoring guide:
1 indicates gross misrepresentation of severity.
3 indicates approximate severity with limited precision.
5 indicates precise and appropriate severity representation.

Fluency and Naturalness:

Is the narrative coherent, well-written, and natural-sounding?
Does it avoid robotic or repetitive phrasing without sounding artificial?

Scoring guide:
1 indicates awkward or highly artificial text.
3 indicates generally fluent but slightly unnatural phrasing.
5 indicates natural, engaging, and human-like language.

Hallucination Risk:

Does the narrative introduce any new symptoms, details, or assumptions not supported by the Template-Based Narrative?

Scoring guide:
1 indicates significant and potentially harmful fabrications.
3 indicates minor unsupported but clinically neutral additions.
5 indicates strict adherence to the provided source data.

Confidence Scoring Guide:

For each dimension, provide a confidence score from 0.0 to 1.0 indicating certainty of the evaluation.
1.0 indicates complete certainty.
0.8-0.9 indicates high confidence.
0.6-0.7 indicates moderate confidence.
0.4-0.5 indicates low confidence.
0.1-0.3 indicates very low confidence.
0.0 indicates no confidence.

Return your evaluation result in the following JSON format:

{{"scores": [...], "confidence": [...], "critique": {{...}}}}"""

SYMPTOM_CATEGORIES = (
    "Anhedonia",
    "DepressedMood",
    "SleepDisturbance",
    "FatigueEnergy",
    "AppetiteChange",
    "SelfWorthGuilt",
    "Concentration",
    "PsychomotorChange",
    "SuicidalIdeation",
    "SomaticDiscomfort",
    "AnxietyArousal",
    "UncontrollableWorry",
    "NegativeEvent",
    "OverallSeverity",
)

_ROSTER = "\n".join(
    f"{i}. {'Anhedonia (loss of interest or pleasure)' if name == 'Anhedonia' else name}"
    for i, name in enumerate(SYMPTOM_CATEGORIES, 1)
)

SYMPTOM_EVAL_SYSTEM = f"""\
You are a clinical evaluation model. Your task is to extract symptom information from two texts:
a ground-truth reference summary and a model-generated prediction summary.
Do not interpret or rewrite either text.
Do not generate explanations or narrative.
You must only evaluate whether symptoms are present and how severe they are.

You must evaluate the following 14 symptom categories:
{_ROSTER}

Severity scale is ordinal and must be inferred from the overall semantic strength of the description.
If a symptom is not present in a text, you must set both presence and severity to 0.

Respond with a SymptomEvaluation JSON object with 14 symptom fields named as above.
Each field contains:
- ref_presence: {{0, 1}} - whether symptom is present in reference
- pred_presence: {{0, 1}} - whether symptom is present in prediction
- ref_severity: {{0, 1, 2, 3}} - severity level in reference
- pred_severity: {{0, 1, 2, 3}} - severity level in prediction

Severity Scale:
0 = Not mentioned/None, 1 = Mild, 2 = Moderate, 3 = Severe"""

SYMPTOM_EVAL_USER = """\
Reference Summary:
{reference}

Prediction Summary:
{prediction}"""

QA_EVAL_SYSTEM = """\
You are a clinical evaluation model. Your task is to assess the severity of a symptom or behavior
described in two texts: a ground-truth reference and a model-generated prediction.

For each text, output a severity score from 0 to 3:
- 0: No symptom / absent / not at all
- 1: Mild / occasionally / somewhat
- 2: Moderate / often / frequently
- 3: Severe / almost always / very frequently

Base your judgment on the semantic intensity and frequency descriptors in each text.
Do not add explanations or any additional fields.

Respond with a SeverityPair JSON object with two fields:
- ref_severity: {0, 1, 2, 3} - severity score for reference text
- pred_severity: {0, 1, 2, 3} - severity score for prediction text"""

QA_EVAL_USER = """\
Question: {question}

Reference: {reference}

Prediction: {prediction}"""

# Stream order and descriptions for the text baselines; heart rate is sampled
# every 10 s, which is what gives 1440 readings over four hours.
TEXT_BASELINE_STREAMS = (
    ("heart_rate", "Heart rate (1 reading every 10 seconds, length 1440)"),
    ("zcr", "Pseudoactigraphy (accelerometer-based movement intensity x zero-crossing rate, length 480)"),
    ("steps", "Steps per minute (length 240)"),
    ("stress", "Stress level (length 240)"),
    ("gps_lon", "GPS longitude (length 24)"),
    ("gps_lat", "GPS latitude (length 24)"),
    ("phone_lock", "Phone unlock status (binary 0/1 per minute, length 240)"),
)

_TEXT_BASELINE_HEAD = """\
You will receive seven time-series streams recorded over the last 4 hours, each represented in text form, along with two summary variables (sleep duration and conversation length).

Time-series Inputs:
{stream_list}

{sleep_conversation}
"""

TEXT_NARRATIVE_PROMPT = (
    "You are a clinical reasoning assistant that interprets physiological and behavioral "
    "time-series data to infer a user's psychological and physical wellbeing.\n\n"
    + _TEXT_BASELINE_HEAD
    + """
Task:
Using only the provided textual data, produce a short clinical summary (about one concise paragraph) describing the user's psychological and physical state over the last 4 hours.

Your description should resemble a human-written mental-health assessment and cover these symptom dimensions:
- Interest or pleasure in activities
- Depressed or hopeless mood
- Sleep quality or restfulness
- Energy or fatigue
- Appetite or eating pattern
- Self-esteem or self-criticism
- Concentration or focus
- Psychomotor activity (slowed or restless)
- Thoughts of self-harm or hopelessness
- Physical discomfort (e.g., headache, stomach, or body aches)
- Nervousness or anxiety
- Uncontrollable worry
- Exposure to recent negative events

Output Format:
Return only the narrative summary paragraph. Do not include bullet points, lists, or section headers. End with a brief statement summarizing the likely mood severity (e.g., mild, moderate, or severe depression/anxiety)."""
)

TEXT_QA_PROMPT = (
    "You are a clinical reasoning assistant that interprets physiological and behavioral "
    "time-series data to answer clinical wellbeing questions about the user.\n\n"
    + _TEXT_BASELINE_HEAD
    + """
Question:
{question}

Answer Requirements:
- Provide a concise, clinically grounded answer in one or two sentences.
- Refer only to the information implied by the time-series data; do not add external facts.
- If the data is insufficient, explicitly say so.

Answer:"""
)
