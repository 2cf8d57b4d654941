//! LLM clients: an OpenAI-style chat-completions client over HTTP and a
//! deterministic template stub for offline runs.

use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::prompt::PromptMessages;
use super::{DecodingParams, Source};
use crate::error::{Error, Result};
use crate::text::{fnv1a64, is_cjk};

pub struct CompletionRequest<'a> {
    pub messages: &'a PromptMessages,
    pub decoding: &'a DecodingParams,
    /// Number of sentences asked for; scales the token budget.
    pub n_sentences: usize,
    pub seed: u64,
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String>;

    fn source(&self) -> Source;

    /// Delay before retry number `attempt` (1-based).
    fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_millis(500u64.saturating_mul(1 << attempt.min(6)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpClientConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
}

impl Default for HttpClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.deepseek.com/chat/completions".into(),
            model: "deepseek-chat".into(),
            api_key_env: "SKILLFORGE_API_KEY".into(),
            timeout_secs: 60,
            max_in_flight: 4,
        }
    }
}

pub struct HttpLlmClient {
    config: HttpClientConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpLlmClient {
    pub fn new(config: HttpClientConfig) -> Self {
        let api_key = std::env::var(&config.api_key_env).ok();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(true)
            .build()
            .into();
        Self {
            config,
            api_key,
            agent,
        }
    }

    pub fn request_body(&self, request: &CompletionRequest<'_>) -> serde_json::Value {
        let d = request.decoding;
        let budget = (d.max_tokens as usize).saturating_mul(request.n_sentences.max(1));
        json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": request.messages.system},
                {"role": "user", "content": request.messages.user},
            ],
            "temperature": d.temperature,
            "top_p": d.top_p,
            "max_tokens": budget,
            "presence_penalty": d.presence_penalty,
            "seed": request.seed,
        })
    }
}

impl LlmClient for HttpLlmClient {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(self.request_body(request))
            .map_err(|e| Error::Client(format!("{}: {e}", self.config.endpoint)))?;
        let body: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Client(format!("bad response body: {e}")))?;
        body.pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| Error::Client("response has no choices[0].message.content".into()))
    }

    fn source(&self) -> Source {
        Source::Llm
    }
}

const SKILL_TEMPLATES: &[&str] = &[
    "熟练掌握{a}，具备{b}方面的实践经验",
    "要求精通{a}并了解{b}",
    "能够独立负责{a}工作，熟悉{b}",
    "有{a}项目经验者优先，懂{b}",
    "具有扎实的{a}基础，能运用{b}解决问题",
    "三年以上{a}经验，掌握{b}",
    "负责公司{a}的日常推进，协助{b}",
    "熟悉{a}流程，对{b}有深入理解",
    "能熟练运用{a}，并可指导他人做{b}",
    "具备良好的{a}能力，兼顾{b}",
    "参与{a}方案设计，落实{b}",
    "掌握{a}常用方法，了解{b}原理",
    "候选人需擅长{a}，最好也会{b}",
    "主导{a}模块，配合团队完成{b}",
    "对{a}有浓厚兴趣，愿意钻研{b}",
    "曾从事{a}岗位，熟知{b}规范",
    "可以胜任{a}任务，并持续优化{b}",
    "拥有{a}证书者优先，需懂得{b}",
    "在{a}领域有成功案例，善于{b}",
    "理解{a}核心概念，能够开展{b}",
];

const NONE_TEMPLATES: &[&str] = &[
    "公司提供{x}，{y}",
    "工作地点位于{c}，{y}",
    "我们是一家{k}企业，{x}",
    "薪资面议，{x}",
    "{c}总部欢迎你的加入，{y}",
    "入职即享{x}，另有{y}",
    "本岗位隶属{k}事业部，办公地点在{c}",
    "团队氛围轻松，{y}",
    "周末双休，{x}",
    "简历请投递至招聘邮箱，{y}",
];

const NONE_BENEFITS: &[&str] = &[
    "五险一金", "带薪年假", "年终奖金", "免费午餐", "定期体检", "节日福利", "住房补贴",
    "交通补助", "弹性工作制", "员工旅游", "股票期权", "通讯补贴",
];
const NONE_EXTRAS: &[&str] = &[
    "待遇从优", "晋升空间大", "欢迎应届生投递", "长期稳定发展", "提供住宿", "节假日正常休息",
    "入职签订劳动合同", "每年两次调薪", "工作环境舒适", "面试通过后尽快入职",
];
const NONE_CITIES: &[&str] = &["北京", "上海", "深圳", "广州", "杭州", "成都", "武汉", "南京", "苏州", "西安"];
const NONE_KINDS: &[&str] = &["互联网", "制造业", "外资", "上市", "国有", "创业", "连锁零售", "物流"];

/// Characters dropped when the stub extracts keywords from a definition.
const STOP_CHARS: &str = "的以及和与或等相关类专业能力在对了是及并其中之一";

/// Every character the stub writes outside of keyword slots.
pub fn stub_reserved_chars() -> impl Iterator<Item = char> {
    SKILL_TEMPLATES
        .iter()
        .chain(NONE_TEMPLATES)
        .chain(NONE_BENEFITS)
        .chain(NONE_EXTRAS)
        .chain(NONE_CITIES)
        .chain(NONE_KINDS)
        .flat_map(|s| s.chars())
        .chain(STOP_CHARS.chars())
        .filter(|c| is_cjk(*c))
        .collect::<Vec<_>>()
        .into_iter()
}

/// Deterministic offline generator.
///
/// It reads the rendered prompt, pulls keywords out of the skill label and
/// definition, and fills requirement templates with them. With
/// `paraphrase_rate > 0` each keyword is replaced, with that probability, by
/// a fixed alias so that surface overlap with the definition shrinks while
/// the sentence stays learnable.
#[derive(Debug, Clone, Default)]
pub struct StubClient {
    pub paraphrase_rate: f64,
    /// Lines to return per call, capped by the requested count; `None` means
    /// all of them. Used to simulate under-delivery.
    pub max_lines: Option<usize>,
    pub seed: u64,
}

impl StubClient {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn with_paraphrase(mut self, rate: f64) -> Self {
        self.paraphrase_rate = rate;
        self
    }
}

struct ParsedPrompt {
    n: usize,
    /// (label, definition) per skill in prompt order.
    skills: Vec<(String, String)>,
    no_skill: bool,
}

fn parse_prompt(user: &str) -> ParsedPrompt {
    let mut n = 1;
    let mut labels = Vec::new();
    let mut defs = Vec::new();
    let mut no_skill = false;
    for line in user.lines() {
        let line = line.trim();
        if let Some(v) = line.strip_prefix("Number of sentences:") {
            n = v.trim().parse().unwrap_or(1);
        } else if line.starts_with("Skill") {
            if let Some((_, v)) = line.split_once(':') {
                labels.push(v.trim().to_string());
            }
        } else if line.starts_with("Definition") {
            if let Some((_, v)) = line.split_once(':') {
                defs.push(v.trim().to_string());
            }
        } else if line.starts_with("Do not include any requirements") {
            no_skill = true;
        }
    }
    let skills = labels
        .into_iter()
        .zip(defs.into_iter().chain(std::iter::repeat(String::new())))
        .collect();
    ParsedPrompt { n, skills, no_skill }
}

/// Keywords of a phrase: ASCII-ish words as-is, CJK runs cut into
/// two-character chunks, function characters removed.
fn keywords(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut run = String::new();
    let flush = |run: &mut String, out: &mut Vec<String>| {
        if run.is_empty() {
            return;
        }
        let chars: Vec<char> = run.chars().collect();
        if chars.iter().all(|c| is_cjk(*c)) {
            for chunk in chars.chunks(2) {
                out.push(chunk.iter().collect());
            }
        } else {
            out.push(run.clone());
        }
        run.clear();
    };
    for c in text.chars() {
        let boundary = !c.is_alphanumeric()
            || STOP_CHARS.contains(c)
            || (!run.is_empty() && is_cjk(c) != run.chars().all(is_cjk));
        if boundary {
            flush(&mut run, &mut out);
            if !c.is_alphanumeric() || STOP_CHARS.contains(c) {
                continue;
            }
        }
        run.push(c);
    }
    flush(&mut run, &mut out);
    let mut seen = std::collections::HashSet::new();
    out.retain(|k| seen.insert(k.clone()));
    out
}

/// A fixed alias for a keyword, drawn from a code-point range the toy
/// vocabulary never uses.
fn alias(word: &str) -> String {
    let len = word.chars().count().clamp(2, 3);
    (0..len)
        .map(|i| {
            let h = fnv1a64(format!("{word}#{i}").as_bytes());
            char::from_u32(0x8000 + (h % 0x1F00) as u32).unwrap_or('词')
        })
        .collect()
}

impl StubClient {
    fn maybe_alias(&self, word: &str, rng: &mut ChaCha8Rng) -> String {
        if self.paraphrase_rate > 0.0 && rng.gen_bool(self.paraphrase_rate.clamp(0.0, 1.0)) {
            alias(word)
        } else {
            word.to_string()
        }
    }

    fn skill_sentences(&self, p: &ParsedPrompt, rng: &mut ChaCha8Rng) -> Vec<String> {
        let per_skill: Vec<(Vec<String>, Vec<String>)> = p
            .skills
            .iter()
            .map(|(label, def)| {
                let mut head = keywords(label);
                if head.is_empty() {
                    head.push(label.clone());
                }
                let mut body: Vec<String> =
                    keywords(def).into_iter().filter(|k| !head.contains(k)).collect();
                if body.is_empty() {
                    body = head.clone();
                }
                (head, body)
            })
            .collect();
        let mut order: Vec<usize> = (0..SKILL_TEMPLATES.len()).collect();
        order.shuffle(rng);
        (0..p.n)
            .map(|i| {
                let template = SKILL_TEMPLATES[order[i % order.len()]];
                let (a, b) = if per_skill.len() >= 2 {
                    let first = per_skill[0].0.choose(rng).unwrap();
                    let second = per_skill[1].0.choose(rng).unwrap();
                    if rng.gen_bool(0.5) {
                        (first.clone(), second.clone())
                    } else {
                        (second.clone(), first.clone())
                    }
                } else {
                    let (head, body) = &per_skill[0];
                    (head.choose(rng).unwrap().clone(), body.choose(rng).unwrap().clone())
                };
                template
                    .replace("{a}", &self.maybe_alias(&a, rng))
                    .replace("{b}", &self.maybe_alias(&b, rng))
            })
            .collect()
    }

    fn none_sentences(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
        (0..n)
            .map(|_| {
                let t = NONE_TEMPLATES.choose(rng).unwrap();
                t.replace("{x}", NONE_BENEFITS.choose(rng).unwrap())
                    .replace("{y}", NONE_EXTRAS.choose(rng).unwrap())
                    .replace("{c}", NONE_CITIES.choose(rng).unwrap())
                    .replace("{k}", NONE_KINDS.choose(rng).unwrap())
            })
            .collect()
    }
}

impl LlmClient for StubClient {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String> {
        let p = parse_prompt(&request.messages.user);
        let key = fnv1a64(format!("{}\n{}", request.messages.system, request.messages.user).as_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(key ^ request.seed.rotate_left(17) ^ self.seed);
        let lines = if p.no_skill || p.skills.is_empty() {
            self.none_sentences(p.n, &mut rng)
        } else {
            self.skill_sentences(&p, &mut rng)
        };
        let take = self.max_lines.map_or(lines.len(), |m| m.min(lines.len()));
        Ok(lines
            .into_iter()
            .take(take)
            .map(|l| format!("- {l}\n"))
            .collect())
    }

    fn source(&self) -> Source {
        Source::Stub
    }

    fn backoff(&self, _attempt: u32) -> Duration {
        Duration::ZERO
    }
}
