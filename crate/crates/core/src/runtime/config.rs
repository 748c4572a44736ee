use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::core_list::ServerId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Am,
    Tr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Unordered,
    Sorted,
}

/// Relative weights of client operations. For the sorted variant `lookup`
/// weighs searches and `next` is ignored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpMix {
    pub insert: u32,
    pub delete: u32,
    pub lookup: u32,
    pub next: u32,
}

impl Default for OpMix {
    fn default() -> Self {
        OpMix {
            insert: 3,
            delete: 1,
            lookup: 2,
            next: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    /// Split the `sublist`-th sublist (global order) after its `pos`-th node.
    Split { sublist: usize, pos: usize },
    Move { sublist: usize, to: ServerId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Directive {
    pub at: u64,
    pub action: Action,
}

impl FromStr for Directive {
    type Err = String;

    /// `T:split:N:P` or `T:move:N:S`.
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.trim().split(':').map(str::trim).collect();
        let num = |i: usize| -> Result<u64, String> {
            parts
                .get(i)
                .ok_or_else(|| format!("directive `{s}`: missing field {i}"))?
                .parse::<u64>()
                .map_err(|e| format!("directive `{s}`: {e}"))
        };
        if parts.len() != 4 {
            return Err(format!("directive `{s}`: expected T:op:N:X"));
        }
        let at = num(0)?;
        let sublist = num(2)? as usize;
        let action = match parts[1] {
            "split" => Action::Split {
                sublist,
                pos: num(3)? as usize,
            },
            "move" => Action::Move {
                sublist,
                to: num(3)? as ServerId,
            },
            other => return Err(format!("directive `{s}`: unknown op `{other}`")),
        };
        Ok(Directive { at, action })
    }
}

impl fmt::Display for Directive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.action {
            Action::Split { sublist, pos } => write!(f, "{}:split:{}:{}", self.at, sublist, pos),
            Action::Move { sublist, to } => write!(f, "{}:move:{}:{}", self.at, sublist, to),
        }
    }
}

pub fn parse_script(s: &str) -> Result<Vec<Directive>, String> {
    let mut v = s
        .split(';')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<Directive>, _>>()?;
    v.sort_by_key(|d| d.at);
    Ok(v)
}

/// Everything that determines a simulated run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub protocol: Protocol,
    pub variant: Variant,
    pub servers: u16,
    pub clients: u16,
    pub seed: u64,
    pub op_mix: OpMix,
    /// Total client operations across all clients.
    pub steps: u64,
    pub theta: u64,
    pub request_timeout: u64,
    pub split_threshold: usize,
    pub auto_split: bool,
    pub move_batch: usize,
    pub script: Vec<Directive>,
    pub net_delay: (u64, u64),
    pub reorder: bool,
    pub sublists: usize,
    pub initial_keys: usize,
    pub key_space: u64,
    pub think: (u64, u64),
    /// Clients stop issuing updates at this tick.
    pub write_until: Option<u64>,
    /// Clients start issuing operations at this tick.
    pub start_at: u64,
    /// Ticks between background delink passes; 0 disables them.
    pub delink_every: u64,
    pub capacity: usize,
    pub max_polls: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            protocol: Protocol::Am,
            variant: Variant::Unordered,
            servers: 3,
            clients: 2,
            seed: 1,
            op_mix: OpMix::default(),
            steps: 200,
            theta: 1000,
            request_timeout: 200,
            split_threshold: 64,
            auto_split: false,
            move_batch: 1,
            script: vec![],
            net_delay: (1, 4),
            reorder: true,
            sublists: 1,
            initial_keys: 16,
            key_space: 32,
            think: (1, 5),
            write_until: None,
            start_at: 0,
            delink_every: 0,
            capacity: 1 << 14,
            max_polls: 20_000_000,
        }
    }
}

fn range(v: &str) -> Result<(u64, u64), String> {
    let (a, b) = v
        .split_once("..")
        .ok_or_else(|| format!("expected MIN..MAX, got `{v}`"))?;
    let a = a.trim().parse::<u64>().map_err(|e| e.to_string())?;
    let b = b.trim().parse::<u64>().map_err(|e| e.to_string())?;
    if a > b {
        return Err(format!("empty range `{v}`"));
    }
    Ok((a, b))
}

fn num<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("`{v}`: {e}"))
}

fn boolean(v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("expected a boolean, got `{v}`")),
    }
}

impl SimConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        let err = |e: String| format!("{key}: {e}");
        match key.trim() {
            "protocol" => {
                self.protocol = match v {
                    "am" => Protocol::Am,
                    "tr" => Protocol::Tr,
                    _ => return Err(format!("protocol: expected am or tr, got `{v}`")),
                }
            }
            "variant" => {
                self.variant = match v {
                    "unordered" => Variant::Unordered,
                    "sorted" => Variant::Sorted,
                    _ => return Err(format!("variant: expected unordered or sorted, got `{v}`")),
                }
            }
            "servers" => self.servers = num(v).map_err(err)?,
            "clients" => self.clients = num(v).map_err(err)?,
            "seed" => self.seed = num(v).map_err(err)?,
            "op_mix" => {
                let w: Vec<u32> = v
                    .split(',')
                    .map(|x| num::<u32>(x.trim()))
                    .collect::<Result<_, _>>()
                    .map_err(err)?;
                if w.len() != 4 {
                    return Err("op_mix: expected insert,delete,lookup,next".into());
                }
                self.op_mix = OpMix {
                    insert: w[0],
                    delete: w[1],
                    lookup: w[2],
                    next: w[3],
                };
            }
            "steps" => self.steps = num(v).map_err(err)?,
            "theta" => self.theta = num(v).map_err(err)?,
            "request_timeout" => self.request_timeout = num(v).map_err(err)?,
            "split_threshold" => self.split_threshold = num(v).map_err(err)?,
            "auto_split" => self.auto_split = boolean(v).map_err(err)?,
            "move_batch" => self.move_batch = num(v).map_err(err)?,
            "script" => self.script = parse_script(v).map_err(err)?,
            "net_delay" => self.net_delay = range(v).map_err(err)?,
            "reorder" => self.reorder = boolean(v).map_err(err)?,
            "sublists" => self.sublists = num(v).map_err(err)?,
            "initial_keys" => self.initial_keys = num(v).map_err(err)?,
            "key_space" => self.key_space = num(v).map_err(err)?,
            "think" => self.think = range(v).map_err(err)?,
            "write_until" => {
                self.write_until = if v == "none" { None } else { Some(num(v).map_err(err)?) }
            }
            "start_at" => self.start_at = num(v).map_err(err)?,
            "delink_every" => self.delink_every = num(v).map_err(err)?,
            "capacity" => self.capacity = num(v).map_err(err)?,
            "max_polls" => self.max_polls = num(v).map_err(err)?,
            other => return Err(format!("unknown config key `{other}`")),
        }
        Ok(())
    }

    /// Applies a flat `key = value` text, one entry per line; `#` starts a
    /// comment.
    pub fn apply_kv(&mut self, text: &str) -> Result<(), String> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
            self.set(k, v).map_err(|e| format!("line {}: {e}", i + 1))?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self, String> {
        let mut c = SimConfig::default();
        c.apply_kv(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.servers == 0 {
            return Err("servers must be at least 1".into());
        }
        if self.sublists == 0 {
            return Err("sublists must be at least 1".into());
        }
        if self.net_delay.0 == 0 {
            return Err("net_delay minimum must be at least 1".into());
        }
        if self.move_batch == 0 {
            return Err("move_batch must be at least 1".into());
        }
        if self.request_timeout >= self.theta {
            return Err("theta must exceed request_timeout".into());
        }
        if self.theta <= 4 * self.net_delay.1 {
            return Err("theta must exceed four network delays".into());
        }
        if self.variant == Variant::Sorted && self.key_space < self.sublists as u64 {
            return Err("key_space must cover every sublist".into());
        }
        for d in &self.script {
            if let Action::Move { to, .. } = d.action {
                if to >= self.servers {
                    return Err(format!("script `{d}`: no server {to}"));
                }
            }
        }
        let total = self.op_mix.insert + self.op_mix.delete + self.op_mix.lookup + self.op_mix.next;
        if total == 0 && self.steps > 0 && self.clients > 0 {
            return Err("op_mix has no weight".into());
        }
        Ok(())
    }

    /// Client-side ref expiration; a lease lasts `theta` ticks and a request
    /// may take up to `request_timeout` of them.
    pub fn ref_ttl(&self) -> u64 {
        self.theta - self.request_timeout
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_roundtrip_of_common_keys() {
        let c = SimConfig::from_kv(
            "protocol = tr\nservers=2 # two\nscript = 10:split:0:3; 5:move:0:1\nnet_delay=1..1\nreorder=false\n",
        )
        .unwrap();
        assert_eq!(c.protocol, Protocol::Tr);
        assert_eq!(c.servers, 2);
        assert_eq!(c.net_delay, (1, 1));
        assert!(!c.reorder);
        assert_eq!(c.script[0].to_string(), "5:move:0:1");
        assert_eq!(c.script[1].action, Action::Split { sublist: 0, pos: 3 });
    }

    #[test]
    fn bad_input_is_rejected() {
        assert!(SimConfig::from_kv("nope = 1").is_err());
        assert!(SimConfig::from_kv("protocol = xx").is_err());
        assert!(SimConfig::from_kv("script = 1:jump:0:0").is_err());
        assert!(SimConfig::from_kv("servers = 2\nscript = 1:move:0:5").is_err());
        assert!(SimConfig::from_kv("theta = 10\nrequest_timeout = 20").is_err());
    }
}
