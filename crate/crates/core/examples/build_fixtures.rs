//! Regenerates `fixtures/appendix`: snippets, sense inventory, run manifest
//! and the replay store holding the transcribed model outputs.
//!
//! Expected outputs and gold files in that directory are written by hand
//! and are left untouched.
//!
//!     cargo run -p clinex-core --example build_fixtures

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{TimeZone, Utc};
use clinex::corpus::{write_inventory, write_snippets, SenseInventory};
use clinex::gateway::{open_store, StoreMode};
use clinex::pipeline::{build_request, default_engine, default_max_tokens};
use clinex::prompting::TemplateRegistry;
use clinex::{Snippet, TaskKind};
use serde_json::json;

const LUNGS: &str = "GENERAL: Patient is sedated on vent. HEENT: Normocephalic, atraumatic. Pupils are sluggish but reactive and equal bilaterally. NECK: Supple. No lymphadenopathy. No JVD. CARDIAC: Regular rate and rhythm. No murmurs. LUNGS: CTA, intubated. ABDOMEN: Obese, nontender, positive bowel sounds. EXTREMITIES: Positive pulses, positive edema. SKIN: Chronic changes pretibial area bilaterally.";

const CATH: &str = "2. Severe hypertension. 3. Severe mitral regurgitation. 4. Osteoporosis. PROCEDURES: 1. Coronary angiography and hemodynamic evaluation with right heart catheterization. Right heart catheterization shows right atrial pressure of 1, right ventricular pressure of 47/11, PA pressure of 48/16, with a pulmonary capillary wedge pressure of 29, with a large B-wave confirmed with a wedge saturation of 95";

const COPD: &str = "Assessment of acute bronchodilator effects from specific airway resistance changes in stable COPD patients.
BACKGROUND In COPD patients, reversibility is currently evaluated from the changes of forced expiratory volume at 1s (ΔFEV1) and forced vital capacity (ΔFVC). By lowering peripheral airway smooth muscle tone, bronchodilators should decrease dynamic hyperinflation, gas trapping, and possibly dyspnea at rest. Hence, we hypothesize that specific airway resistance changes (ΔsRAW) should better characterize the acute response to bronchodilators.
METHODS On two days, 60 COPD patients underwent dyspnea evaluation (VAS score) and pulmonary function testing at baseline and one hour after placebo or 300 µg indacaterol administration.
RESULTS Spirographic and ΔsRAW-based criteria identified as responders 24 and 45 patients, respectively. ΔsRAW correlated with changes of intrathoracic gas volume (ΔITGV) (r=0.61; p<0.001), residual volume (ΔRV) (r=0.60; p<0.001), ΔFVC (r=0.44; p=0.001), and ΔVAS (r=0.73; p<0.001), while ΔFEV1 correlated only with ΔFVC (r=0.34; p=0.008). Significant differences in terms of ΔITGV (p=0.002), ΔRV (p=0.023), and ΔVAS (p<0.001) occurred only if patients were stratified according to ΔsRAW.";

const BELUGA: &str = "Serum biochemical characteristics of Beluga, Huso huso (L.), in response to blood sampling after clove powder solution exposure.
In order to investigate the effect of anesthesia on serum parameters, Beluga, Huso huso (L.) were blood-sampled immediately without anesthesia (control) or subjected to following anesthesia procedure: 40, 120, and 240 s exposure to 3,000, 700, and 500 mg l-1 clove solution, respectively. Blood samples were collected after these periods, when fish were immobile and reached stage 4 anesthesia. Results showed that cortisol and glucose levels were significantly high in 700 and 500 but not 3,000 mg l-1 group compared to control. Serum lactate levels were significantly high in 500 mg l-1 group compared to control group. Lactate levels were not significantly differed between control, 3,000, and 700 mg l-1 groups. There were no significant differences in serum levels of cholesterol, total protein, lactate dehydrogenase, aspartate aminotransferase, alanine aminotransferase, Na+, Cl-, K+, and Ca2+. Results suggest that rapid anesthesia with higher dose is better than slow anesthesia with lower dose for blood sampling in Beluga.";

const MS: &str = "Her current regimen for her MS is Rebif Monday, Wednesday, and Friday and 1 gram of methylprednisolone p.o. every month. This had been working previously; however, she feels that her symptoms return before her next dose of methylprednisolone is due.";

const KADIAN: &str = "home dose of Kadian as this is her long-acting medication and DC the continuous Dilaudid given IV. 5. Urinary tract infection with Klebsiella and E. coli, both sensitive to Levaquin. Since this was diagnosed Foley has been DC'd. For now would continue Levaquin and recheck urinalysis.";

const ALBUTEROL: &str = "8. Albuterol 2 puffs every 4-6 hours as needed. HOSPITAL COURSE: This is an 80-year-old female who was hospitalized about 2 months ago for chronic obstructive pulmonary disease exacerbation. At that time she was put on prednisone and antibiotics and seemed to get better. However, she was put on Augmentin ES and continued to have difficulty tasting food and felt that food tasted very salty. She had no appetite and she has continued to lose weight over the last 2 months.";

const TOKEN_OUT: &str = r#"8": none
-".": none
-"Albuterol": medication
-"2": dosage
-"puffs": dosage
-"every": frequency
-"4-6": frequency
-"hours": frequency
-"as": none
-"needed": none
-".": none
-"HOSPITAL": none
-"COURSE": none
-"This": none
-"is": none
-"an": none
-"80-year-old": none
-"female": none
-"who": none
-"was": none
-"hospitalized": none
-"about": duration
-"2": duration
-"months": duration
-"ago": duration
-"for": reason
-"chronic": reason
-"obstructive": reason
-"pulmonary": reason
-"disease": reason
-"exacerbation": reason
-".": none
-"At": none
-"that": none
-"time": none
-"she": none
-"was": none
-"put": none
-"on": none
-"prednisone": medication"#;

const PHRASE_OUT: &str = r#"8": none
-".": none
-"Albuterol": medication
-"2 puffs": dosage
-"every 4-6 hours": frequency
-"as needed": duration
-".": none
-"HOSPITAL COURSE": none
-"This": none
-"is": none
-"an": none
-"80-year-old": none
-"female": none
-"who": none
-"was": none
-"hospitalized": none
-"about": none
-"2 months": duration
-"ago": none
-"for": none
-"chronic": none
-"obstructive": none
-"pulmonary": none
-"disease": reason
-"exacerbation": none
-".": none
-"At": none
-"that": none
-"time": none
-"she": none
-"was": none
-"put": none
-"on": none
-"prednisone": medication"#;

const REL_OUT: &str = r#"medication: "Albuterol", dosage: "2 puffs", frequency: "every 4-6 hours", duration: "as needed"
-medication: "prednisone", duration: "2 months"
-medication: "antibiotics", duration: "2 months"
-medication: "Augmentin ES", duration: "2 months""#;

struct Run {
    task: TaskKind,
    template: &'static str,
    snippets: &'static str,
    /// (snippet id, transcribed output)
    outputs: Vec<(&'static str, String)>,
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/appendix");
    std::fs::create_dir_all(&dir)?;

    let snippet_sets: Vec<(&str, Vec<Snippet>)> = vec![
        (
            "sense.snippets.jsonl",
            vec![
                Snippet::new("a1_cta", LUNGS, Some("CTA".into()))?,
                Snippet::new("a1_pa", CATH, Some("PA".into()))?,
            ],
        ),
        (
            "arms.snippets.jsonl",
            vec![Snippet::new("a2_copd", COPD, None)?, Snippet::new("a2_beluga", BELUGA, None)?],
        ),
        ("coref.snippets.jsonl", vec![Snippet::new("a3_ms", MS, Some("This".into()))?]),
        ("med_status.snippets.jsonl", vec![Snippet::new("a4_kadian", KADIAN, None)?]),
        ("med_attr.snippets.jsonl", vec![Snippet::new("a5_albuterol", ALBUTEROL, None)?]),
    ];
    for (file, snippets) in &snippet_sets {
        write_snippets(&dir.join(file), snippets)?;
    }

    let mut inv = BTreeMap::new();
    inv.insert(
        "CTA".to_string(),
        vec![
            "computed tomographic angiography".to_string(),
            "clear to auscultation".to_string(),
            "cyproterone acetate".to_string(),
        ],
    );
    inv.insert(
        "PA".to_string(),
        vec![
            "physician assistant".to_string(),
            "posteroanterior".to_string(),
            "pulmonary artery".to_string(),
            "pernicious anemia".to_string(),
        ],
    );
    write_inventory(&dir.join("inventory.json"), &SenseInventory::from_map(inv)?)?;

    let coref_out = r#"her current regimen for her MS""#.to_string();
    let runs = vec![
        Run {
            task: TaskKind::SenseDisambiguation,
            template: "edit",
            snippets: "sense.snippets.jsonl",
            outputs: vec![
                ("a1_cta", LUNGS.replace("CTA", "Clear to auscultation")),
                ("a1_pa", format!("{}%.", CATH.replace("PA pressure", "pulmonary artery pressure"))),
            ],
        },
        Run {
            task: TaskKind::ArmIdentification,
            template: "zero_shot",
            snippets: "arms.snippets.jsonl",
            outputs: vec![
                ("a2_copd", "- Placebo\n- Indacaterol (300 µg)".into()),
                (
                    "a2_beluga",
                    "- Control\n- 3,000 mg l-1 clove solution\n- 700 mg l-1 clove solution\n- 500 mg l-1 clove solution".into(),
                ),
            ],
        },
        Run {
            task: TaskKind::Coreference,
            template: "one_shot_incorrect",
            snippets: "coref.snippets.jsonl",
            outputs: vec![("a3_ms", coref_out.clone())],
        },
        Run {
            task: TaskKind::Coreference,
            template: "one_shot_correct",
            snippets: "coref.snippets.jsonl",
            outputs: vec![("a3_ms", coref_out)],
        },
        Run {
            task: TaskKind::MedStatus,
            template: "zero_shot_guided",
            snippets: "med_status.snippets.jsonl",
            outputs: vec![(
                "a4_kadian",
                "Kadian\" (active)\n-\"Dilaudid\" (discontinued)\n-\"Levaquin\" (active)".into(),
            )],
        },
        Run {
            task: TaskKind::MedStatus,
            template: "one_shot_incorrect",
            snippets: "med_status.snippets.jsonl",
            outputs: vec![(
                "a4_kadian",
                "Kadian\" (active)\n-\"Dilaudid\" (discontinued)\n-\"Levaquin\" (active)".into(),
            )],
        },
        Run {
            task: TaskKind::MedStatus,
            template: "one_shot_correct",
            snippets: "med_status.snippets.jsonl",
            outputs: vec![(
                "a4_kadian",
                "Kadian\" (discontinued)\n-\"Dilaudid\" (discontinued)\n-\"Levaquin\" (discontinued)".into(),
            )],
        },
        Run {
            task: TaskKind::MedAttrToken,
            template: "one_shot",
            snippets: "med_attr.snippets.jsonl",
            outputs: vec![("a5_albuterol", TOKEN_OUT.into())],
        },
        Run {
            task: TaskKind::MedAttrPhrase,
            template: "one_shot",
            snippets: "med_attr.snippets.jsonl",
            outputs: vec![("a5_albuterol", PHRASE_OUT.into())],
        },
        Run {
            task: TaskKind::MedAttrRelation,
            template: "one_shot",
            snippets: "med_attr.snippets.jsonl",
            outputs: vec![("a5_albuterol", REL_OUT.into())],
        },
    ];

    let store_path = dir.join("store.jsonl");
    for p in [store_path.clone(), clinex::gateway::sidecar_path(&store_path)] {
        if p.exists() {
            std::fs::remove_file(p)?;
        }
    }
    let mut store = open_store(&store_path, StoreMode::Append)?;
    let at = Utc.with_ymd_and_hms(2022, 6, 1, 0, 0, 0).single().expect("valid date");
    let registry = TemplateRegistry::builtin();
    let by_id: BTreeMap<&str, &Snippet> = snippet_sets
        .iter()
        .flat_map(|(_, v)| v.iter())
        .map(|s| (s.id.as_str(), s))
        .collect();
    let mut manifest = Vec::new();
    for run in &runs {
        let template = registry.get(run.task, run.template).expect("builtin template");
        for (id, output) in &run.outputs {
            let (req, _) = build_request(template, by_id[id], default_engine(run.task), default_max_tokens(run.task))?;
            store.record_at(&req, output, at)?;
        }
        let mut entry = json!({
            "task": run.task.as_str(),
            "template": run.template,
            "snippets": run.snippets,
            "expected": format!("expected/{}__{}.jsonl", run.task.as_str(), run.template),
            "gold": format!("gold/{}.jsonl", run.task.as_str()),
        });
        if run.task == TaskKind::SenseDisambiguation {
            entry["inventory"] = json!("inventory.json");
        }
        manifest.push(entry);
    }
    std::fs::write(dir.join("runs.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    println!("wrote {} exchanges to {}", store.len(), store_path.display());
    Ok(())
}
