use std::collections::{BTreeMap, HashMap};

use super::{parse, Expr, RuleAst, Threshold, BUILTIN_TEMPLATES};
use crate::error::{Error, Result};
use crate::logic::{GateParams, Mode, Node, ScoringGraph, ThresholdParams};
use crate::scalar::Scalar;
use crate::simfeatures::FeatureCatalog;

/// First reference cycle found, as a list of rule names.
pub(crate) fn find_cycle(rules: &[RuleAst]) -> Option<Vec<String>> {
    let by_name: HashMap<&str, &RuleAst> = rules.iter().map(|r| (r.name.as_str(), r)).collect();
    // 0 unvisited, 1 on stack, 2 done
    let mut state: HashMap<&str, u8> = HashMap::new();
    fn dfs<'a>(
        name: &'a str,
        by_name: &HashMap<&'a str, &'a RuleAst>,
        state: &mut HashMap<&'a str, u8>,
        stack: &mut Vec<&'a str>,
    ) -> Option<Vec<String>> {
        match state.get(name) {
            Some(2) => return None,
            Some(1) => {
                let start = stack.iter().position(|s| *s == name).unwrap_or(0);
                let mut cyc: Vec<String> = stack[start..].iter().map(|s| s.to_string()).collect();
                cyc.push(name.to_string());
                return Some(cyc);
            }
            _ => {}
        }
        state.insert(name, 1);
        stack.push(name);
        if let Some(r) = by_name.get(name) {
            for dep in r.body.rule_refs() {
                if let Some(c) = dfs(dep, by_name, state, stack) {
                    return Some(c);
                }
            }
        }
        stack.pop();
        state.insert(name, 2);
        None
    }
    for r in rules {
        let mut stack = Vec::new();
        if let Some(c) = dfs(&r.name, &by_name, &mut state, &mut stack) {
            return Some(c);
        }
    }
    None
}

/// Replaces every rule reference with the referenced body.
fn inline(expr: &Expr, rules: &HashMap<&str, &RuleAst>, stack: &mut Vec<String>) -> Result<Expr> {
    Ok(match expr {
        Expr::And(xs) => Expr::And(xs.iter().map(|x| inline(x, rules, stack)).collect::<Result<_>>()?),
        Expr::Or(xs) => Expr::Or(xs.iter().map(|x| inline(x, rules, stack)).collect::<Result<_>>()?),
        Expr::Not(x) => Expr::Not(Box::new(inline(x, rules, stack)?)),
        Expr::Pred { .. } => expr.clone(),
        Expr::RuleRef(name) => {
            if stack.contains(name) {
                stack.push(name.clone());
                return Err(Error::Compile(format!("cyclic rule reference {}", stack.join(" -> "))));
            }
            let r = rules
                .get(name.as_str())
                .ok_or_else(|| Error::Compile(format!("undefined rule {name}")))?;
            stack.push(name.clone());
            let body = inline(&r.body, rules, stack)?;
            stack.pop();
            body
        }
    })
}

/// The root rule's body with all references inlined.
pub fn inline_root(rules: &[RuleAst], root: Option<&str>) -> Result<(String, Expr)> {
    let by_name: HashMap<&str, &RuleAst> = rules.iter().map(|r| (r.name.as_str(), r)).collect();
    let root_name = match root {
        Some(r) => {
            if !by_name.contains_key(r) {
                return Err(Error::Compile(format!("root rule {r} is not defined")));
            }
            r.to_string()
        }
        None => {
            let referenced: Vec<&str> = rules.iter().flat_map(|r| r.body.rule_refs()).collect();
            let roots: Vec<&str> = rules
                .iter()
                .map(|r| r.name.as_str())
                .filter(|n| !referenced.contains(n))
                .collect();
            match roots.as_slice() {
                [one] => one.to_string(),
                [] => return Err(Error::Compile("no root rule: every rule is referenced".into())),
                many => {
                    return Err(Error::Compile(format!(
                        "several candidate root rules ({}); pick one explicitly",
                        many.join(", ")
                    )))
                }
            }
        }
    };
    let mut stack = vec![root_name.clone()];
    let body = inline(&by_name[root_name.as_str()].body, &by_name, &mut stack)?;
    Ok((root_name, body))
}

fn check_features(rules: &[RuleAst], catalog: &FeatureCatalog) -> Result<()> {
    for r in rules {
        for leaf in r.body.leaves() {
            if catalog.get(leaf).is_none() {
                return Err(Error::Compile(format!(
                    "predicate `{leaf}` in rule {} is not in the feature catalog",
                    r.name
                )));
            }
        }
    }
    Ok(())
}

fn build<T: Scalar>(expr: &Expr, mode: Mode) -> Node<T> {
    let gate = |n: usize| {
        let mut g = GateParams::init(n);
        if mode == Mode::Manual {
            // hand-set weights are used as they are, not through softplus
            g.raw_weights = vec![T::one(); n];
        }
        g
    };
    match expr {
        Expr::And(xs) => Node::And { params: gate(xs.len()), children: xs.iter().map(|x| build(x, mode)).collect() },
        Expr::Or(xs) => Node::Or { params: gate(xs.len()), children: xs.iter().map(|x| build(x, mode)).collect() },
        Expr::Not(x) => Node::Not(Box::new(build(x, mode))),
        Expr::Pred { name, threshold: None } => Node::Raw { feature: name.clone() },
        Expr::Pred { name, threshold: Some(Threshold::Learnable) } => Node::Threshold {
            feature: name.clone(),
            params: ThresholdParams::default(),
            learnable: true,
        },
        Expr::Pred { name, threshold: Some(Threshold::Fixed(t)) } => Node::Threshold {
            feature: name.clone(),
            params: ThresholdParams::at(T::of(*t)),
            learnable: false,
        },
        Expr::RuleRef(_) => unreachable!("references are inlined before building"),
    }
}

/// Compiles a program into a scoring graph with fresh parameters. Without
/// an explicit `root`, the program must have exactly one rule that no other
/// rule references.
pub fn compile<T: Scalar>(
    rules: &[RuleAst],
    catalog: &FeatureCatalog,
    mode: Mode,
    alpha: T,
    root: Option<&str>,
) -> Result<ScoringGraph<T>> {
    if let Some(c) = find_cycle(rules) {
        return Err(Error::Compile(format!("cyclic rule reference {}", c.join(" -> "))));
    }
    check_features(rules, catalog)?;
    let (_, body) = inline_root(rules, root)?;
    Ok(ScoringGraph::new(build(&body, mode), alpha, mode))
}

/// Parses and compiles in one step.
pub fn compile_rules<T: Scalar>(
    text: &str,
    catalog: &FeatureCatalog,
    mode: Mode,
    alpha: T,
    root: Option<&str>,
) -> Result<ScoringGraph<T>> {
    compile(&parse(text)?, catalog, mode, alpha, root)
}

/// Named rule templates sharing one program.
#[derive(Debug, Clone)]
pub struct TemplateLibrary {
    rules: Vec<RuleAst>,
}

impl Default for TemplateLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateLibrary {
    pub fn builtin() -> Self {
        TemplateLibrary {
            rules: parse(BUILTIN_TEMPLATES).expect("built-in templates parse"),
        }
    }

    pub fn from_rules(rules: Vec<RuleAst>) -> Self {
        TemplateLibrary { rules }
    }

    pub fn names(&self) -> Vec<&str> {
        self.rules.iter().map(|r| r.name.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&RuleAst> {
        self.rules.iter().find(|r| r.name == name)
    }

    pub fn rules(&self) -> &[RuleAst] {
        &self.rules
    }

    pub fn templates(&self) -> BTreeMap<&str, &RuleAst> {
        self.rules.iter().map(|r| (r.name.as_str(), r)).collect()
    }

    /// The named rule together with every rule it depends on, dependencies
    /// first.
    pub fn program(&self, name: &str) -> Result<Vec<RuleAst>> {
        let mut out: Vec<RuleAst> = Vec::new();
        self.collect(name, &mut out)?;
        Ok(out)
    }

    fn collect(&self, name: &str, out: &mut Vec<RuleAst>) -> Result<()> {
        if out.iter().any(|r| r.name == name) {
            return Ok(());
        }
        let r = self
            .get(name)
            .ok_or_else(|| Error::Compile(format!("unknown template {name}")))?;
        for dep in r.body.rule_refs() {
            self.collect(dep, out)?;
        }
        out.push(r.clone());
        Ok(())
    }

    /// Program whose root is the disjunction of the given templates. A
    /// single template is returned as is.
    pub fn union(&self, names: &[&str]) -> Result<(Vec<RuleAst>, String)> {
        match names {
            [] => Err(Error::Invalid("empty template subset".into())),
            [one] => Ok((self.program(one)?, one.to_string())),
            many => {
                let mut out = Vec::new();
                for n in many {
                    for r in self.program(n)? {
                        if !out.iter().any(|o: &RuleAst| o.name == r.name) {
                            out.push(r);
                        }
                    }
                }
                let mut root = many.join("+");
                while out.iter().any(|o| o.name == root) {
                    root.push('_');
                }
                let body = Expr::Or(many.iter().map(|n| Expr::RuleRef(n.to_string())).collect());
                out.push(RuleAst::new(root.clone(), body));
                Ok((out, root))
            }
        }
    }

    pub fn compile<T: Scalar>(&self, name: &str, catalog: &FeatureCatalog, mode: Mode, alpha: T) -> Result<ScoringGraph<T>> {
        compile(&self.program(name)?, catalog, mode, alpha, Some(name))
    }
}
