//! Parent dashboard aggregates, computed as a pure fold over a child's
//! event streams.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::dialogue::AnswerJudgment;
use crate::session::{EventPayload, SessionEvent};

/// What counts as "knowledge learned".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeRule {
    /// Surfaced in an interaction.
    #[default]
    Surfaced,
    /// Surfaced and followed by a correct answer in the same interaction.
    AnsweredCorrectly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DashboardOptions {
    /// Count greeting and mode setup as reading time.
    pub include_setup_time: bool,
    pub knowledge_rule: KnowledgeRule,
    /// End of live elapsed time for open sessions; defaults to their last event.
    pub now: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentBook {
    pub session_id: String,
    pub book_id: String,
    pub book_title: String,
    pub page_index: usize,
    pub pages_shown: usize,
    pub page_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookHistory {
    pub book_id: String,
    pub book_title: String,
    pub completion: f64,
    pub last_read: DateTime<Utc>,
    pub sessions: u32,
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearnedKnowledge {
    pub entry_id: String,
    pub statement: String,
    pub first_surfaced: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DashboardSummary {
    pub child_id: String,
    pub current_book: Option<CurrentBook>,
    /// Most recently read first.
    pub history: Vec<BookHistory>,
    pub total_reading_seconds: i64,
    pub books_completed: u32,
    pub knowledge_learned: Vec<LearnedKnowledge>,
}

impl DashboardSummary {
    pub fn empty(child_id: &str) -> Self {
        Self {
            child_id: child_id.to_string(),
            current_book: None,
            history: Vec::new(),
            total_reading_seconds: 0,
            books_completed: 0,
            knowledge_learned: Vec::new(),
        }
    }
}

struct SessionFold {
    session_id: String,
    book_id: String,
    book_title: String,
    page_count: usize,
    pages: BTreeSet<usize>,
    page_index: usize,
    start: Option<DateTime<Utc>>,
    reading_start: Option<DateTime<Utc>>,
    last: Option<DateTime<Utc>>,
    completed: bool,
    // (entry, statement, time, answered correctly)
    surfaced: Vec<(String, String, DateTime<Utc>, bool)>,
}

fn fold_session(events: &[SessionEvent]) -> Option<SessionFold> {
    let mut fold: Option<SessionFold> = None;
    let mut open_knowledge: Option<usize> = None;
    for e in events {
        if let EventPayload::Warning { .. } = e.payload {
            continue;
        }
        if let EventPayload::SessionStarted { session_id, book_id, book_title, page_count, .. } = &e.payload {
            fold = Some(SessionFold {
                session_id: session_id.clone(),
                book_id: book_id.clone(),
                book_title: book_title.clone(),
                page_count: *page_count,
                pages: BTreeSet::new(),
                page_index: 0,
                start: Some(e.wall),
                reading_start: None,
                last: Some(e.wall),
                completed: false,
                surfaced: Vec::new(),
            });
            continue;
        }
        let Some(f) = fold.as_mut() else { continue };
        f.last = Some(e.wall);
        match &e.payload {
            EventPayload::ModeSet { .. } if f.reading_start.is_none() => f.reading_start = Some(e.wall),
            EventPayload::PageShown { page_index, .. } => {
                f.pages.insert(*page_index);
                f.page_index = *page_index;
                f.reading_start.get_or_insert(e.wall);
                open_knowledge = None;
            }
            EventPayload::KnowledgeSurfaced { entry_id, statement, .. } => {
                f.surfaced.push((entry_id.clone(), statement.clone(), e.wall, false));
                open_knowledge = Some(f.surfaced.len() - 1);
            }
            EventPayload::AnswerAssessed { judgment: AnswerJudgment::Correct, .. } => {
                if let Some(i) = open_knowledge {
                    f.surfaced[i].3 = true;
                }
            }
            EventPayload::SummaryTurn { .. } => open_knowledge = None,
            EventPayload::SessionCompleted { .. } => f.completed = true,
            _ => {}
        }
    }
    fold
}

/// Dashboard for one child from that child's streams.
pub fn compute_dashboard(child_id: &str, streams: &[Vec<SessionEvent>], options: &DashboardOptions) -> DashboardSummary {
    let mut summary = DashboardSummary::empty(child_id);
    let mut books: BTreeMap<String, BookHistory> = BTreeMap::new();
    let mut learned: BTreeMap<String, LearnedKnowledge> = BTreeMap::new();
    let mut latest_open: Option<(DateTime<Utc>, CurrentBook)> = None;

    for stream in streams {
        let Some(f) = fold_session(stream) else { continue };
        let (Some(start), Some(last)) = (f.start, f.last) else { continue };
        let from = if options.include_setup_time { Some(start) } else { f.reading_start };
        let until = if f.completed { last } else { options.now.map_or(last, |n| n.max(last)) };
        if let Some(from) = from {
            summary.total_reading_seconds += (until - from).num_seconds().max(0);
        }
        if f.completed {
            summary.books_completed += 1;
        } else {
            let current = CurrentBook {
                session_id: f.session_id.clone(),
                book_id: f.book_id.clone(),
                book_title: f.book_title.clone(),
                page_index: f.page_index,
                pages_shown: f.pages.len(),
                page_count: f.page_count,
            };
            if latest_open.as_ref().is_none_or(|(t, _)| last >= *t) {
                latest_open = Some((last, current));
            }
        }
        let completion = if f.page_count == 0 {
            0.0
        } else {
            (f.pages.len() as f64 / f.page_count as f64).clamp(0.0, 1.0)
        };
        let h = books.entry(f.book_id.clone()).or_insert_with(|| BookHistory {
            book_id: f.book_id.clone(),
            book_title: f.book_title.clone(),
            completion: 0.0,
            last_read: last,
            sessions: 0,
            completed: false,
        });
        h.sessions += 1;
        h.completion = h.completion.max(completion);
        h.last_read = h.last_read.max(last);
        h.completed |= f.completed;

        for (entry_id, statement, at, correct) in f.surfaced {
            if options.knowledge_rule == KnowledgeRule::AnsweredCorrectly && !correct {
                continue;
            }
            learned
                .entry(entry_id.clone())
                .and_modify(|k| {
                    if at < k.first_surfaced {
                        k.first_surfaced = at;
                    }
                })
                .or_insert(LearnedKnowledge { entry_id, statement, first_surfaced: at });
        }
    }

    summary.current_book = latest_open.map(|(_, c)| c);
    summary.history = books.into_values().collect();
    summary
        .history
        .sort_by(|a, b| b.last_read.cmp(&a.last_read).then_with(|| a.book_id.cmp(&b.book_id)));
    summary.knowledge_learned = learned.into_values().collect();
    summary
        .knowledge_learned
        .sort_by(|a, b| a.first_surfaced.cmp(&b.first_surfaced).then_with(|| a.entry_id.cmp(&b.entry_id)));
    summary
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grade::GradeLevel;
    use crate::learner::ConversationStatus;
    use crate::session::{ReadingMode, EVENT_SCHEMA_VERSION};
    use chrono::Duration;

    fn t0() -> DateTime<Utc> {
        DateTime::parse_from_rfc3339("2024-05-01T09:00:00Z").unwrap().with_timezone(&Utc)
    }

    fn ev(session: &str, seq: u64, secs: i64, payload: EventPayload) -> SessionEvent {
        SessionEvent {
            v: EVENT_SCHEMA_VERSION,
            seq,
            session_id: session.into(),
            child_id: "c".into(),
            mono_ns: secs as u64 * 1_000_000_000,
            wall: t0() + Duration::seconds(secs),
            payload,
        }
    }

    fn surfaced(id: &str) -> EventPayload {
        EventPayload::KnowledgeSurfaced {
            page_index: Some(0),
            entry_id: id.into(),
            statement: format!("statement {id}"),
            grade: GradeLevel::Kindergarten,
            keyword: "k".into(),
            similarity: 0.9,
        }
    }

    fn started(session: &str, pages: usize) -> EventPayload {
        EventPayload::SessionStarted {
            session_id: session.into(),
            child_id: "c".into(),
            book_id: "b".into(),
            book_title: "B".into(),
            page_count: pages,
            greeting: true,
            profile: None,
        }
    }

    /// Ten events: two pages, two distinct entries, completed.
    fn ten_event_log(session: &str) -> Vec<SessionEvent> {
        let payloads = vec![
            started(session, 2),
            EventPayload::ProfileCaptured { profile: Default::default(), warnings: vec![] },
            EventPayload::ModeSet { mode: ReadingMode::default() },
            EventPayload::PageShown { page_index: 0, audio_key: None },
            surfaced("A"),
            EventPayload::PageShown { page_index: 1, audio_key: None },
            surfaced("B"),
            EventPayload::warning("x", "ignored"),
            EventPayload::SummaryTurn {
                speaker: crate::prompt::Speaker::Assistant,
                text: "bye".into(),
                moves: vec![],
                follow_up_expected: false,
                audio_key: None,
            },
            EventPayload::SessionCompleted { pages_shown: 2 },
        ];
        payloads.into_iter().enumerate().map(|(i, p)| ev(session, i as u64, i as i64 * 10, p)).collect()
    }

    #[test]
    fn hand_folded_ten_event_log() {
        let d = compute_dashboard("c", &[ten_event_log("s")], &DashboardOptions::default());
        assert_eq!(d.knowledge_learned.len(), 2);
        assert_eq!(d.books_completed, 1);
        // Reading starts at ModeSet (20 s) and ends at completion (90 s).
        assert_eq!(d.total_reading_seconds, 70);
        assert_eq!(d.history.len(), 1);
        assert_eq!(d.history[0].completion, 1.0);
        assert!(d.current_book.is_none());
        let with_setup = compute_dashboard(
            "c",
            &[ten_event_log("s")],
            &DashboardOptions { include_setup_time: true, ..Default::default() },
        );
        assert_eq!(with_setup.total_reading_seconds, 90);
    }

    #[test]
    fn empty_log() {
        let d = compute_dashboard("c", &[], &DashboardOptions::default());
        assert_eq!(d, DashboardSummary::empty("c"));
    }

    #[test]
    fn same_entry_counted_once() {
        let d = compute_dashboard("c", &[ten_event_log("s1"), ten_event_log("s2")], &DashboardOptions::default());
        assert_eq!(d.knowledge_learned.len(), 2);
        assert_eq!(d.books_completed, 2);
        assert_eq!(d.history[0].sessions, 2);
    }

    #[test]
    fn warnings_do_not_change_summary() {
        let base = ten_event_log("s");
        let mut with_warning = base.clone();
        with_warning.push(ev("s", 10, 500, EventPayload::warning("late", "x")));
        let opts = DashboardOptions::default();
        assert_eq!(compute_dashboard("c", &[base], &opts), compute_dashboard("c", &[with_warning], &opts));
    }

    #[test]
    fn answered_correctly_rule() {
        let mut log = ten_event_log("s");
        log.insert(
            5,
            ev(
                "s",
                0,
                45,
                EventPayload::AnswerAssessed {
                    judgment: AnswerJudgment::Correct,
                    topic: "t".into(),
                    status: ConversationStatus::default(),
                },
            ),
        );
        let opts = DashboardOptions { knowledge_rule: KnowledgeRule::AnsweredCorrectly, ..Default::default() };
        let d = compute_dashboard("c", &[log], &opts);
        assert_eq!(d.knowledge_learned.len(), 1);
        assert_eq!(d.knowledge_learned[0].entry_id, "A");
    }

    #[test]
    fn open_session_is_current_book() {
        let log: Vec<_> = ten_event_log("s").into_iter().take(4).collect();
        let d = compute_dashboard(
            "c",
            &[log],
            &DashboardOptions { now: Some(t0() + Duration::seconds(100)), ..Default::default() },
        );
        let current = d.current_book.unwrap();
        assert_eq!(current.pages_shown, 1);
        assert_eq!(d.history[0].completion, 0.5);
        assert_eq!(d.total_reading_seconds, 80);
    }
}
