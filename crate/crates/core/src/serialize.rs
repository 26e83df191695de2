//! Flattening of triples and tables into the text sequences seen by scorers
//! and the reasoner.
//!
//! Layouts:
//!
//! * triple: `[HEAD] {head label} [REL] {property label} [TAIL] {tail label or literal}`
//! * table: `col : h1 | h2 row 1 : c11 | c12 row 2 : ...` (1-based rows, links dropped)
//! * retrieval context: `{table} {triple}`
//! * reasoner input: `{question} {table} {triple 1} {triple 2} ...`
//!
//! Labels are emitted verbatim; nothing is escaped or truncated here.

use serde::{Deserialize, Serialize};

use crate::kb::{KbError, LabelMap, Triple, TripleTail};
use crate::table::Table;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextKind {
    Triple,
    Table,
    RetrievalContext,
    ReasonerInput,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SerializedText {
    pub text: String,
    pub kind: TextKind,
}

impl SerializedText {
    fn new(text: String, kind: TextKind) -> Self {
        Self { text, kind }
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

pub fn serialize_triple(tr: &Triple, labels: &LabelMap) -> Result<SerializedText, KbError> {
    let head = labels.require(tr.head.as_str())?;
    let rel = labels.require(tr.property.as_str())?;
    let tail = match &tr.tail {
        TripleTail::Entity(e) => labels.require(e.as_str())?,
        TripleTail::Literal { text, .. } => text.as_str(),
    };
    Ok(SerializedText::new(
        format!("[HEAD] {head} [REL] {rel} [TAIL] {tail}"),
        TextKind::Triple,
    ))
}

pub fn serialize_table(t: &Table) -> SerializedText {
    let mut out = String::from("col : ");
    out.push_str(&t.headers().join(" | "));
    for (i, row) in t.rows().iter().enumerate() {
        out.push_str(&format!(" row {} : ", i + 1));
        let cells: Vec<&str> = row.iter().map(|c| c.text.as_str()).collect();
        out.push_str(&cells.join(" | "));
    }
    SerializedText::new(out, TextKind::Table)
}

/// Bi-encoder context: the (sub-)table followed by the triple.
pub fn build_retrieval_context(
    sub: &Table,
    tr: &Triple,
    labels: &LabelMap,
) -> Result<SerializedText, KbError> {
    let triple = serialize_triple(tr, labels)?;
    Ok(SerializedText::new(
        format!("{} {}", serialize_table(sub).text, triple.text),
        TextKind::RetrievalContext,
    ))
}

/// Question, table and triples (in the given order, most relevant first).
pub fn build_reasoner_input(
    q: &str,
    t: &Table,
    triples: &[Triple],
    labels: &LabelMap,
) -> Result<SerializedText, KbError> {
    let mut out = format!("{} {}", q, serialize_table(t).text);
    for tr in triples {
        out.push(' ');
        out.push_str(&serialize_triple(tr, labels)?.text);
    }
    Ok(SerializedText::new(out, TextKind::ReasonerInput))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{EntityId, PropertyId};
    use crate::table::{triple_related_subtable, Cell};

    fn e(s: &str) -> EntityId {
        EntityId::new(s).unwrap()
    }
    fn p(s: &str) -> PropertyId {
        PropertyId::new(s).unwrap()
    }

    fn labels() -> LabelMap {
        let mut l = LabelMap::new();
        for (id, label) in [
            ("Q_KW", "Kanye West"),
            ("Q_GM", "GOOD Music"),
            ("Q_TCD", "The College Dropout"),
            ("Q_TBP", "The Blueprint"),
            ("Q_JZ", "Jay-Z"),
            ("P_label", "record label"),
            ("P_pubdate", "publication date"),
        ] {
            l.insert(id, label).unwrap();
        }
        l
    }

    fn kw_label() -> Triple {
        Triple::relational(e("Q_KW"), p("P_label"), e("Q_GM"))
    }

    fn tcd_date() -> Triple {
        Triple::attribute(e("Q_TCD"), p("P_pubdate"), "time", "February 10, 2004")
    }

    fn albums() -> Table {
        Table::new(
            "T1",
            vec!["Album".into(), "Artist".into()],
            vec![
                vec![
                    Cell::linked("The Blueprint", [e("Q_TBP")]),
                    Cell::linked("Jay-Z", [e("Q_JZ")]),
                ],
                vec![
                    Cell::linked("The College Dropout", [e("Q_TCD")]),
                    Cell::linked("Kanye West", [e("Q_KW")]),
                ],
            ],
        )
        .unwrap()
    }

    #[test]
    fn triple_layouts() {
        let l = labels();
        assert_eq!(
            serialize_triple(&kw_label(), &l).unwrap().text,
            "[HEAD] Kanye West [REL] record label [TAIL] GOOD Music"
        );
        assert_eq!(
            serialize_triple(&tcd_date(), &l).unwrap().text,
            "[HEAD] The College Dropout [REL] publication date [TAIL] February 10, 2004"
        );
    }

    #[test]
    fn markers_inside_labels_pass_through() {
        let mut l = labels();
        l.insert("P_odd", "has [REL] inside").unwrap();
        let t = Triple::relational(e("Q_KW"), p("P_odd"), e("Q_GM"));
        assert_eq!(
            serialize_triple(&t, &l).unwrap().text,
            "[HEAD] Kanye West [REL] has [REL] inside [TAIL] GOOD Music"
        );
    }

    #[test]
    fn missing_label_names_the_id() {
        let t = Triple::relational(e("Q_KW"), p("P_missing"), e("Q_GM"));
        let err = serialize_triple(&t, &labels()).unwrap_err();
        assert!(err.to_string().contains("P_missing"));
    }

    #[test]
    fn table_layouts() {
        let one = Table::new("x", vec!["A".into()], vec![vec![Cell::plain("x")]]).unwrap();
        assert_eq!(serialize_table(&one).text, "col : A row 1 : x");
        assert_eq!(
            serialize_table(&albums()).text,
            "col : Album | Artist row 1 : The Blueprint | Jay-Z row 2 : The College Dropout | Kanye West"
        );
        let two = Table::new(
            "x",
            vec!["A".into(), "B".into()],
            vec![vec![Cell::plain("a"), Cell::plain("b")]],
        )
        .unwrap();
        let empty = triple_related_subtable(&two, &kw_label());
        assert_eq!(serialize_table(&empty).text, "col : A | B");
    }

    #[test]
    fn retrieval_context_composes() {
        let l = labels();
        let t = albums();
        let sub = triple_related_subtable(&t, &kw_label());
        let ctx = build_retrieval_context(&sub, &kw_label(), &l).unwrap();
        assert_eq!(
            ctx.text,
            "col : Album | Artist row 1 : The College Dropout | Kanye West \
             [HEAD] Kanye West [REL] record label [TAIL] GOOD Music"
        );
        assert_eq!(ctx, build_retrieval_context(&sub, &kw_label(), &l).unwrap());

        let none = Triple::relational(e("Q_GM"), p("P_label"), e("Q_GM"));
        let sub = triple_related_subtable(&t, &none);
        assert!(build_retrieval_context(&sub, &none, &l)
            .unwrap()
            .text
            .starts_with("col : Album | Artist [HEAD] GOOD Music"));
    }

    #[test]
    fn reasoner_input_composes_in_order() {
        let l = labels();
        let t = albums();
        let q = "What was the release date of the studio album from the artist who signed to the record label GOOD Music?";
        let bare = build_reasoner_input(q, &t, &[], &l).unwrap();
        assert_eq!(bare.text, format!("{q} {}", serialize_table(&t).text));
        let full = build_reasoner_input(q, &t, &[kw_label(), tcd_date()], &l).unwrap();
        assert_eq!(
            full.text,
            format!(
                "{q} col : Album | Artist row 1 : The Blueprint | Jay-Z row 2 : The College Dropout | Kanye West \
                 [HEAD] Kanye West [REL] record label [TAIL] GOOD Music \
                 [HEAD] The College Dropout [REL] publication date [TAIL] February 10, 2004"
            )
        );
        let swapped = build_reasoner_input(q, &t, &[tcd_date(), kw_label()], &l).unwrap();
        assert_ne!(full, swapped);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn triple_has_markers_in_order(h in "[a-zA-Z0-9 ]{1,12}", r in "[a-z ]{1,12}", v in "[a-z0-9 ,]{1,12}") {
                let mut l = LabelMap::new();
                l.insert("Q1", &h).unwrap();
                l.insert("P1", &r).unwrap();
                let t = Triple::attribute(e("Q1"), p("P1"), "string", v.clone());
                let s = serialize_triple(&t, &l).unwrap().text;
                for m in ["[HEAD]", "[REL]", "[TAIL]"] {
                    prop_assert_eq!(s.matches(m).count(), 1);
                }
                let (a, b, c) = (s.find("[HEAD]").unwrap(), s.find("[REL]").unwrap(), s.find("[TAIL]").unwrap());
                prop_assert!(a < b && b < c);
                prop_assert_eq!(s.clone(), serialize_triple(&t, &l).unwrap().text);
            }

            #[test]
            fn table_row_marker_count(rows in 1usize..6, cols in 1usize..4) {
                let grid = (0..rows).map(|r| (0..cols).map(|c| Cell::plain(format!("v{r}{c}"))).collect()).collect();
                let t = Table::new("x", (0..cols).map(|c| format!("h{c}")).collect(), grid).unwrap();
                prop_assert_eq!(serialize_table(&t).text.matches("row ").count(), rows);
            }
        }
    }
}
