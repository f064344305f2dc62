//! Service capability maps.
//!
//! Both server roles decide what to do with a service request by its tag,
//! the UTF-8 prefix of the request before the first `:`. An edge server's
//! map routes each tag either to itself (`local`) or to a list of cloud
//! servers; a cloud server's map lists the tags it serves as `local`.
//!
//! The file format is line-based:
//!
//! ```text
//! # telemetry is handled at the edge
//! telemetry = local
//! archive = CS1, CS2
//! ```
//!
//! `local` is a reserved route name, so no cloud server may be called
//! `local`. Entry order is preserved: when several cloud servers can
//! serve a tag, the first listed wins.

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CapsError {
    #[error("line {0}: expected `tag = route`")]
    BadLine(usize),
    #[error("line {0}: empty tag")]
    EmptyTag(usize),
    #[error("duplicate tag `{0}`")]
    DuplicateTag(String),
    #[error("line {0}: empty route")]
    EmptyRoute(usize),
}

/// Where requests with a given tag go.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Route {
    /// Served by the map's owner.
    Local,
    /// Relayed to the first reachable cloud server in the list.
    Clouds(Vec<String>),
}

/// Ordered tag-to-route table, parsed from and serialized to the shared
/// capability file format.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ServiceMap {
    entries: Vec<(String, Route)>,
}

impl ServiceMap {
    pub fn new() -> ServiceMap {
        ServiceMap::default()
    }

    pub fn insert(&mut self, tag: &str, route: Route) -> Result<(), CapsError> {
        if self.resolve(tag).is_some() {
            return Err(CapsError::DuplicateTag(tag.into()));
        }
        self.entries.push((tag.into(), route));
        Ok(())
    }

    pub fn resolve(&self, tag: &str) -> Option<&Route> {
        self.entries
            .iter()
            .find(|(t, _)| t == tag)
            .map(|(_, r)| r)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Route)> {
        self.entries.iter().map(|(t, r)| (t.as_str(), r))
    }

    /// Tags routed `local`.
    pub fn local_tags(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(_, r)| *r == Route::Local)
            .map(|(t, _)| t.as_str())
            .collect()
    }

    pub fn parse(text: &str) -> Result<ServiceMap, CapsError> {
        let mut map = ServiceMap::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (lhs, rhs) = line.split_once('=').ok_or(CapsError::BadLine(lineno))?;
            let tag = lhs.trim();
            if tag.is_empty() {
                return Err(CapsError::EmptyTag(lineno));
            }
            let rhs = rhs.trim();
            let route = if rhs == "local" {
                Route::Local
            } else {
                let clouds: Vec<String> = rhs
                    .split(',')
                    .map(|c| c.trim().to_string())
                    .filter(|c| !c.is_empty())
                    .collect();
                if clouds.is_empty() {
                    return Err(CapsError::EmptyRoute(lineno));
                }
                Route::Clouds(clouds)
            };
            if map.resolve(tag).is_some() {
                return Err(CapsError::DuplicateTag(tag.into()));
            }
            map.entries.push((tag.into(), route));
        }
        Ok(map)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (tag, route) in &self.entries {
            match route {
                Route::Local => out.push_str(&format!("{tag} = local\n")),
                Route::Clouds(list) => out.push_str(&format!("{tag} = {}\n", list.join(", "))),
            }
        }
        out
    }
}

/// Extracts the routing tag from a service request: the bytes before the
/// first `:` (or the whole request), decoded as UTF-8. Returns `None` for
/// non-UTF-8 prefixes, which no map can route.
pub fn service_tag(service: &[u8]) -> Option<&str> {
    let end = service
        .iter()
        .position(|b| *b == b':')
        .unwrap_or(service.len());
    std::str::from_utf8(&service[..end]).ok()
}
