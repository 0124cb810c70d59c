//! Desk-scale synthetic delivery-support chats with known intent labels.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{normalize_text, CorpusError, Speaker, Transcript, Turn};

/// Question paraphrases and answer variants for one customer intent.
/// `{item}` and `{carrier}` are filled from lexicons shared by every family.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntentFamily {
    pub name: String,
    pub questions: Vec<String>,
    pub answers: Vec<String>,
}

type FamilySpec = (
    &'static str,
    &'static [&'static str],
    &'static [&'static str],
);

const FAMILIES: &[FamilySpec] = &[
    (
        "delivery_eta",
        &[
            "when will i receive my {item} ?",
            "when is my {item} going to arrive ?",
            "how long until the {item} gets here ?",
            "what day will my package be delivered ?",
        ],
        &[
            "it will be delivered DATE .",
            "you will get the items on DATE .",
            "you 'll receive the package within 24 hours .",
        ],
    ),
    (
        "presence_check",
        &[
            "hi are you there ?",
            "hello ? anyone there ?",
            "are you still there ?",
            "is anybody there ?",
        ],
        &[
            "yes i 'm here .",
            "yes , i 'm checking it .",
            "sorry for the delay in responding .",
        ],
    ),
    (
        "cancel_order",
        &[
            "can i cancel the order ?",
            "is it possible to cancel my {item} order ?",
            "how do i cancel this ?",
        ],
        &[
            "i can cancel it for you .",
            "i 've cancelled it .",
            "which items you need to cancel ?",
        ],
    ),
    (
        "not_shipped",
        &[
            "why it has n't been shipped yet ?",
            "why is my {item} still not shipped ?",
            "when will you ship it ?",
        ],
        &[
            "i am glad to check the status of your order .",
            "your order is already entered to the shipping process .",
            "it is out of stock .",
        ],
    ),
    (
        "gift_card",
        &[
            "how can i use the gift card balance ?",
            "where do i use my gift card ?",
            "can i spend the gift card credit now ?",
        ],
        &[
            "you can use it on your next purchase .",
            "the refund will be reflected in your gift card balance in the next 1-3 hours .",
        ],
    ),
    (
        "refund_status",
        &[
            "ok you start the refund ?",
            "is the refund done ?",
            "did the refund already go through ?",
            "have you issued a refund for the {item} ?",
        ],
        &[
            "yes , the refund has been processed .",
            "you will see the money back in 3-5 business days .",
        ],
    ),
    (
        "email_confirmation",
        &[
            "and will i be sent an email ?",
            "will i get a confirmation email ?",
            "do you send me an email about it ?",
        ],
        &["yes , NAME .", "yes , you will receive an email shortly ."],
    ),
    (
        "shipping_speed",
        &[
            "can the ship speed be changed ?",
            "can i upgrade to faster shipping ?",
            "is it possible to get it faster ?",
        ],
        &[
            "yes , i 've already upgraded .",
            "i have changed it to one-day delivery at no cost .",
        ],
    ),
    (
        "resend",
        &[
            "can i ask for a resend ?",
            "could you send me a replacement ?",
            "can you send another {item} ?",
        ],
        &[
            "i have created a replacement order for you .",
            "a new one will ship out today at no charge .",
        ],
    ),
    (
        "tracking_number",
        &[
            "will i receive a new tracking number ?",
            "where can i find the tracking number ?",
            "can you give me the tracking info ?",
        ],
        &[
            "yes we 'll have it emailed to you .",
            "you can see the tracking details in your orders page .",
        ],
    ),
    (
        "address_change",
        &[
            "can i change the delivery address ?",
            "is it too late to update my address ?",
            "how do i ship it to a different address ?",
        ],
        &[
            "i 've updated the address on the order .",
            "unfortunately the address ca n't be changed once it has shipped .",
        ],
    ),
    (
        "damaged_item",
        &[
            "what should i do with the broken {item} ?",
            "the {item} arrived damaged , what now ?",
            "can i return a damaged {item} ?",
        ],
        &[
            "i 'm so sorry about that . please keep it , i will send a new one .",
            "you can print the return label from your account .",
        ],
    ),
    (
        "missing_package",
        &[
            "it says delivered but where is my package ?",
            "why does it show delivered when i did n't get it ?",
            "what if the package never came ?",
        ],
        &[
            "please check with your neighbors and around the building first .",
            "sometimes carriers mark it delivered early , it usually arrives within 48 hours .",
        ],
    ),
    (
        "carrier",
        &[
            "which carrier is bringing my {item} ?",
            "who is delivering the package ?",
            "is it coming by {carrier} ?",
        ],
        &[
            "it is being shipped with {carrier} .",
            "the carrier for this shipment is {carrier} .",
        ],
    ),
    (
        "return_window",
        &[
            "how long do i have to return it ?",
            "can i still return the {item} ?",
            "what is the return period ?",
        ],
        &[
            "you can return it within 30 days of delivery .",
            "the return window closes DATE .",
        ],
    ),
    (
        "prime_shipping",
        &[
            "does my prime membership cover this ?",
            "why did n't i get prime shipping ?",
            "is prime delivery available for my {item} ?",
        ],
        &[
            "prime members get free two-day shipping on eligible items .",
            "this item is not eligible for prime .",
        ],
    ),
    (
        "payment_charge",
        &[
            "why was my card charged twice ?",
            "when will you charge my card ?",
            "can i pay with a different card ?",
        ],
        &[
            "the card is charged only when the item ships .",
            "the second charge is an authorization hold and will drop off .",
        ],
    ),
    (
        "locker_pickup",
        &[
            "can i pick it up from a locker ?",
            "where is the pickup location ?",
            "how do i get the locker code ?",
        ],
        &[
            "the locker code will be emailed when the package arrives .",
            "you can pick it up within 3 days from the locker .",
        ],
    ),
    (
        "anything_else",
        &[
            "is there anything else i need to do ?",
            "do i need to do anything else ?",
            "anything else from my side ?",
        ],
        &[
            "no , you do n't need to do anything else .",
            "nothing else is needed , everything is set .",
        ],
    ),
    (
        "delay_credit",
        &[
            "can i get a credit for the late delivery ?",
            "will i be compensated for the delay ?",
            "do i get anything for waiting so long ?",
        ],
        &[
            "i 've added a promotional credit of NUMBER to your account .",
            "as an apology i have applied a credit to your account .",
        ],
    ),
    (
        "order_status",
        &[
            "what is the status of my order ?",
            "has my order been processed ?",
            "is my {item} order confirmed ?",
        ],
        &[
            "your order is confirmed and being prepared .",
            "the order is in process and will ship soon .",
        ],
    ),
    (
        "wrong_item",
        &[
            "i got the wrong {item} , what can i do ?",
            "why did you send me a different {item} ?",
            "can i exchange the wrong item ?",
        ],
        &[
            "i 'm sorry for the mix-up , i 'll send the correct one right away .",
            "please return the wrong item with the free label .",
        ],
    ),
    (
        "signature",
        &[
            "does someone need to sign for it ?",
            "do i have to be home for the delivery ?",
            "is a signature required ?",
        ],
        &[
            "no signature is required for this package .",
            "the driver can leave it at your door .",
        ],
    ),
    (
        "weekend_delivery",
        &[
            "do you deliver on sunday ?",
            "will it come on the weekend ?",
            "can it arrive on saturday ?",
        ],
        &[
            "yes , we deliver seven days a week in your area .",
            "weekend delivery is available for this order .",
        ],
    ),
];

/// Names of the hand-written intent families, in intent-index order.
pub const SYNTH_INTENT_NAMES: [&str; 24] = [
    "delivery_eta",
    "presence_check",
    "cancel_order",
    "not_shipped",
    "gift_card",
    "refund_status",
    "email_confirmation",
    "shipping_speed",
    "resend",
    "tracking_number",
    "address_change",
    "damaged_item",
    "missing_package",
    "carrier",
    "return_window",
    "prime_shipping",
    "payment_charge",
    "locker_pickup",
    "anything_else",
    "delay_credit",
    "order_status",
    "wrong_item",
    "signature",
    "weekend_delivery",
];

const ITEMS: &[&str] = &[
    "shoes",
    "package",
    "phone",
    "book",
    "order",
    "headphones",
    "camera",
    "jacket",
];
const CARRIERS: &[&str] = &["ups", "usps", "fedex", "dhl"];
const OPENINGS: &[&str] = &[
    "Hi.",
    "hello",
    "hi there .",
    "Good morning!",
    "hi , i have a question about my order .",
];
const GREETINGS: &[&str] = &[
    "hello , thank you for contacting us . my name is NAME .",
    "hi NAME , how can i help you today ?",
    "thanks for reaching out , i 'm happy to help .",
];
const STALLS: &[&str] = &["ok ?", "hello ?", "so ?"];
const QUESTION_PREFIXES: &[&str] = &["", "", "", "and ", "ok ", "so "];
const ANSWER_PREFIXES: &[&str] = &["", "", "", "sure , ", "okay , ", "alright , "];
const CLOSINGS: &[&str] = &[
    "thanks .",
    "ok thank you .",
    "great .",
    "thank you so much !",
];
const SIGNOFFS: &[&str] = &[
    "you 're welcome . have a nice day !",
    "is there anything else i can help you with ?",
    "thank you for contacting us .",
];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ren", "tu", "sa", "vo", "pel", "dri", "no", "gan", "fe",
];

/// Intent families for indices `0..n`. The first 24 are hand-written; the
/// rest are generated from invented topic words so any count is available.
pub fn intent_families(n: usize) -> Vec<IntentFamily> {
    (0..n)
        .map(|i| match FAMILIES.get(i) {
            Some((name, qs, ans)) => IntentFamily {
                name: name.to_string(),
                questions: qs.iter().map(|s| s.to_string()).collect(),
                answers: ans.iter().map(|s| s.to_string()).collect(),
            },
            None => invented_family(i),
        })
        .collect()
}

const INVENTED_QUESTIONS: &[&str] = &[
    "can you help with my {t} ?",
    "what is going on with the {t} {d} ?",
    "is the {t} for my {item} ready ?",
    "how do i get a {t} {d} ?",
    "why was my {t} declined ?",
    "can i add a {t} to my order ?",
    "where do i find the {t} {d} ?",
    "is there a fee for the {t} ?",
];

const INVENTED_ANSWERS: &[&str] = &[
    "the {t} is handled , no action needed .",
    "your {d} will be sorted out by DATE .",
    "i have escalated the {t} to our {d} team .",
    "the {t} fee has been waived .",
    "you can find the {t} {d} under your account settings .",
    "we are unable to offer a {t} for this item .",
    "i 've added the {t} {d} to your order .",
    "the {t} was declined because the {d} expired .",
    "your {t} will be ready in NUMBER days .",
    "please send us a photo of the {d} .",
];

/// A family built from invented topic words placed into a per-family
/// selection of sentence frames.
fn invented_family(i: usize) -> IntentFamily {
    let word = |k: usize| -> String {
        let mut s = String::new();
        let mut x = k;
        for _ in 0..3 {
            s.push_str(SYLLABLES[x % SYLLABLES.len()]);
            x /= SYLLABLES.len();
        }
        s
    };
    let topic = word(i * 7 + 3);
    let detail = word(i * 13 + 5);
    let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
    let fill = |frame: &&str| frame.replace("{t}", &topic).replace("{d}", &detail);
    IntentFamily {
        name: format!("topic_{topic}"),
        questions: INVENTED_QUESTIONS
            .choose_multiple(&mut rng, 3)
            .map(fill)
            .collect(),
        answers: INVENTED_ANSWERS
            .choose_multiple(&mut rng, 3)
            .map(fill)
            .collect(),
    }
}

/// Intent index encoded in a synthetic transcript id.
pub fn intent_of(transcript_id: &str) -> Option<usize> {
    transcript_id
        .rsplit('-')
        .next()
        .and_then(|tail| tail.strip_prefix('i'))
        .and_then(|n| n.parse().ok())
}

fn fill(pattern: &str, rng: &mut ChaCha8Rng) -> String {
    let mut s = pattern.to_string();
    while s.contains("{item}") {
        s = s.replacen("{item}", ITEMS.choose(rng).unwrap(), 1);
    }
    while s.contains("{carrier}") {
        s = s.replacen("{carrier}", CARRIERS.choose(rng).unwrap(), 1);
    }
    s
}

fn capitalize_first(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Generates `n_transcripts` chats, each built around one of `n_intents`
/// intent families. Ids look like `synth-000042-i07`, where the trailing
/// number is the intent index (see [`intent_of`]).
pub fn generate_synthetic_corpus(
    n_intents: usize,
    n_transcripts: usize,
    seed: u64,
) -> Result<Vec<Transcript>, CorpusError> {
    if n_intents < 2 {
        return Err(CorpusError::InvalidSpec(format!(
            "need at least 2 intents, got {n_intents}"
        )));
    }
    let families = intent_families(n_intents);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = Vec::with_capacity(n_transcripts);
    for t in 0..n_transcripts {
        let intent = rng.random_range(0..n_intents);
        let family = &families[intent];
        let mut turns: Vec<(Speaker, String)> = vec![
            (
                Speaker::Customer,
                OPENINGS.choose(&mut rng).unwrap().to_string(),
            ),
            (
                Speaker::Agent,
                GREETINGS.choose(&mut rng).unwrap().to_string(),
            ),
        ];
        if rng.random_bool(0.2) {
            // An unanswered question directly followed by the real one.
            turns.push((
                Speaker::Customer,
                STALLS.choose(&mut rng).unwrap().to_string(),
            ));
        }
        let mut question = format!(
            "{}{}",
            QUESTION_PREFIXES.choose(&mut rng).unwrap(),
            fill(family.questions.choose(&mut rng).unwrap(), &mut rng)
        );
        if rng.random_bool(0.3) {
            question = capitalize_first(&question);
        }
        let answer = format!(
            "{}{}",
            ANSWER_PREFIXES.choose(&mut rng).unwrap(),
            fill(family.answers.choose(&mut rng).unwrap(), &mut rng)
        );
        turns.push((Speaker::Customer, question));
        turns.push((Speaker::Agent, answer));
        turns.push((
            Speaker::Customer,
            CLOSINGS.choose(&mut rng).unwrap().to_string(),
        ));
        turns.push((
            Speaker::Agent,
            SIGNOFFS.choose(&mut rng).unwrap().to_string(),
        ));

        let turns = turns
            .into_iter()
            .enumerate()
            .map(|(index, (speaker, text))| Turn {
                speaker,
                tokens: normalize_text(&text),
                index,
            })
            .collect();
        corpus.push(Transcript {
            id: format!("synth-{t:06}-i{intent:02}"),
            turns,
        });
    }
    Ok(corpus)
}
