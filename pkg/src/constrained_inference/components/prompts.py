"""Prompt templates for question answering and mention-pair link questions"""
import hashlib
import logging
from collections.abc import Sequence

from pydantic import BaseModel, Field

from ..config import COREF_FAMILIES, SRL_FAMILIES, TemplateFamily
from ..errors import TemplateError
from ..models import CorefInstance, Mention

log = logging.getLogger(__name__)

# Slot markers are literal; substitution is plain string replacement so the
# output is byte-for-byte the template with slot values inserted.
TEMPLATES: dict[str, str] = {
    "t5-qa": "question: <ques> context: <context>",
    "flan-qa": "<context> \n In the above sentence, <ques>",
    "macaw-mc": "$answer$ ; $question$ = <ques> ; $context$ = <context>",
    "flan-iterative": (
        "<context> \n Previous questions and answers: \n<history>"
        " \n The answer must not overlap with any previous answer. In the above sentence, <ques>"
    ),
    "coref-macaw": "$answer$ ; $mcoptions$=(A) Yes (B) No  ; <context> Does <m1> refer to <m2>?",
    "coref-flan": "<context> \n In the above passage, does <m1> refer to <m2>? Yes or No?",
}

ITERATIVE_HISTORY_ITEM = " Q: <q> A: <a>"

# (yes, no) answer strings scored for each link-question family
CHOICES: dict[str, tuple[str, str]] = {
    "coref-flan": ("Yes", "No"),
    "coref-macaw": ("$answer$ = Yes", "$answer$ = No"),
}


def answer_placeholder(role_id: str) -> str:
    """Stand-in for an answer that only exists after the previous question is scored"""
    return f"<answer:{role_id}>"


def prompt_id(text: str) -> str:
    """Stable short id of a prompt, used in errors and prompt files"""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


class PriorAnswer(BaseModel):
    """One already answered question of an iterative prompt"""
    question: str
    answer: str
    role_id: str | None = None


class PromptRequest(BaseModel):
    """Slot values for one prompt"""
    family: TemplateFamily = Field(..., description="Template family")
    question: str | None = Field(default=None, description="Role question (SRL families)")
    context: str = Field(..., description="Sentence or passage shown to the model")
    mention1: str | None = Field(default=None, description="Earlier mention (link families)")
    mention2: str | None = Field(default=None, description="Later mention (link families)")
    prior: list[PriorAnswer] = Field(
        default_factory=list, description="Answered questions, in asking order (iterative family)"
    )
    role_id: str | None = Field(default=None, description="Role being asked (iterative family)")
    question_order: list[str] | None = Field(
        default=None, description="Role order the iterative loop follows"
    )


def _check_slots(req: PromptRequest) -> None:
    if req.family in SRL_FAMILIES:
        if not req.question:
            raise TemplateError(f"Family '{req.family}' needs a question")
        if req.mention1 is not None or req.mention2 is not None:
            raise TemplateError(f"Family '{req.family}' takes no mentions")
    elif req.family in COREF_FAMILIES:
        if not req.mention1 or not req.mention2:
            raise TemplateError(f"Family '{req.family}' needs both mentions")
        if req.question is not None:
            raise TemplateError(f"Family '{req.family}' takes no question")
    if req.prior and req.family != "flan-iterative":
        raise TemplateError(f"Family '{req.family}' does not take prior answers")


def render_prompt(req: PromptRequest) -> str:
    """Instantiate the family's template with the request slots"""
    _check_slots(req)
    if req.family == "flan-iterative":
        return render_iterative_prompt(req)
    text = TEMPLATES[req.family].replace("<context>", req.context)
    if req.family in SRL_FAMILIES:
        return text.replace("<ques>", req.question)
    return text.replace("<m1>", req.mention1).replace("<m2>", req.mention2)


def render_iterative_prompt(req: PromptRequest) -> str:
    """
    Question with every previously answered question in front of it

    Without prior answers this is exactly the flan-qa prompt.
    """
    if req.family != "flan-iterative":
        raise TemplateError(f"Iterative rendering needs family 'flan-iterative', got '{req.family}'")
    _check_slots(req)

    if req.question_order is not None:
        asked = [p.role_id for p in req.prior]
        expected = req.question_order[:len(req.prior)]
        if asked != expected:
            raise TemplateError(
                f"Prior answers {asked} do not follow the question order {expected}"
            )
        if req.role_id is not None:
            position = len(req.prior)
            if position >= len(req.question_order) or req.question_order[position] != req.role_id:
                raise TemplateError(
                    f"Role '{req.role_id}' is not the next question after {asked}"
                )

    if not req.prior:
        return TEMPLATES["flan-qa"].replace("<context>", req.context).replace("<ques>", req.question)

    history = " \n".join(
        ITERATIVE_HISTORY_ITEM.replace("<q>", p.question).replace("<a>", p.answer)
        for p in req.prior
    )
    return (
        TEMPLATES["flan-iterative"]
        .replace("<context>", req.context)
        .replace("<history>", history)
        .replace("<ques>", req.question)
    )


def _highlight(tokens: list[str], mention: Mention) -> None:
    if mention.end <= mention.start or mention.end > len(tokens):
        log.debug(f"Mention '{mention.id}' has no token offsets; not highlighted")
        return
    tokens[mention.start] = "*" + tokens[mention.start]
    tokens[mention.end - 1] = tokens[mention.end - 1] + "*"


def coref_context(
    instance: CorefInstance,
    m1: Mention,
    m2: Mention,
    style: str = "relevant",
    highlight: bool = False,
) -> str:
    """
    Passage for a link question

    `relevant` keeps the sentences holding the two mentions (document order,
    one copy when both share a sentence); `full` keeps the whole document.
    """
    if not instance.sentences:
        return m1.text if m1.text == m2.text else f"{m1.text} {m2.text}"
    if style == "full":
        indices = list(range(len(instance.sentences)))
    elif style == "relevant":
        indices = sorted({m1.sentence_index, m2.sentence_index})
    else:
        raise TemplateError(f"Unknown context style '{style}'")

    sentences = {i: list(instance.sentences[i]) for i in indices}
    if highlight:
        for mention in (m1, m2):
            if mention.sentence_index in sentences:
                _highlight(sentences[mention.sentence_index], mention)
    return " ".join(" ".join(sentences[i]) for i in indices)


def link_request(
    family: str,
    instance: CorefInstance,
    m1: Mention,
    m2: Mention,
    style: str = "relevant",
    highlight: bool = False,
) -> PromptRequest:
    return PromptRequest(
        family=family,
        context=coref_context(instance, m1, m2, style=style, highlight=highlight),
        mention1=m1.text,
        mention2=m2.text,
    )


def staged_iterative_prompts(
    context: str,
    questions: Sequence[tuple[str, str]],
) -> list[tuple[str, str]]:
    """
    (role_id, prompt) for every role, with earlier answers left as placeholders

    The scoring loop replaces each placeholder once that role is answered.
    """
    prompts = []
    prior: list[PriorAnswer] = []
    order = [role_id for role_id, _ in questions]
    for role_id, question in questions:
        req = PromptRequest(
            family="flan-iterative",
            question=question,
            context=context,
            prior=list(prior),
            role_id=role_id,
            question_order=order,
        )
        prompts.append((role_id, render_iterative_prompt(req)))
        prior.append(PriorAnswer(question=question, answer=answer_placeholder(role_id), role_id=role_id))
    return prompts
