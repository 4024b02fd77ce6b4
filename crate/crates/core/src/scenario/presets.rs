use std::path::Path;

use super::ScenarioConfig;
use crate::error::Result;

pub const PRESET_NAMES: [&str; 9] =
    ["1-A", "1-B", "1-C", "2-A", "2-B", "table2", "table3", "table3-http1", "table3-overwrite"];

const TESTBED: &str = r#"
capacity_kbps = 3000
k = 2
buffer_max_s = 10.0
base_rtt_s = 0.05
seed = 1
repetitions = 5

[ladder]
rates_kbps = [99, 192, 285, 470, 656, 838, 1118, 1401, 1855, 2324, 2791]
segment_duration_s = 1.0
total_segments = 200
"#;

const PUSH_COUNT: &str = r#"
capacity_kbps = 1000000
k = 2
buffer_max_s = 10.0
base_rtt_s = 0.05
seed = 1
repetitions = 1
strategy = "reactive"

[ladder]
rates_kbps = [99, 192, 285, 470, 656, 838, 1118, 1401, 1855, 2324, 2791]
segment_duration_s = 1.0
total_segments = 100

[abr]
fixed_kbps = 99

[[clients]]
id = "a1"
join = { at_s = 0.0 }

[metrics]
tracked_client = "a1"
avg_window = [1, 100]
"#;

fn together(n: usize) -> String {
    (1..=n).map(|i| format!("[[clients]]\nid = \"a{i}\"\njoin = {{ at_s = 0.0 }}\n\n")).collect()
}

fn late_joiners(names: &[&str]) -> String {
    let mut s = String::from("[[clients]]\nid = \"a1\"\njoin = { at_s = 0.0 }\n\n");
    for n in names {
        s.push_str(&format!(
            "[[clients]]\nid = \"{n}\"\njoin = {{ after_client = \"a1\", after_segments = 100 }}\n\n"
        ));
    }
    s.push_str("[metrics]\ntracked_client = \"a1\"\nwindow_from_join_of = \"a2\"\navg_window = [100, 200]\n");
    s
}

fn text(name: &str) -> Option<String> {
    let head = |desc: &str| format!("name = \"{name}\"\ndescription = \"{desc}\"\n");
    Some(match name {
        "1-A" => format!("{}{TESTBED}\n{}", head("2 clients join together"), together(2)),
        "1-B" => format!("{}{TESTBED}\n{}", head("3 clients join together"), together(3)),
        "1-C" => format!("{}{TESTBED}\n{}", head("4 clients join together"), together(4)),
        "2-A" => format!(
            "{}{TESTBED}\n{}",
            head("a2 joins after a1 receives segment 100"),
            late_joiners(&["a2"])
        ),
        "2-B" => format!(
            "{}{TESTBED}\n{}",
            head("a2 and a3 join together after a1 receives segment 100"),
            late_joiners(&["a2", "a3"])
        ),
        "table2" => format!(
            "{}strategy = \"reactive\"\n{TESTBED}\n{}",
            head("one client, slice 1/3/1 Mbps over segments 1-60/61-120/121-200"),
            r#"[[clients]]
id = "a1"
join = { at_s = 0.0 }

[[bandwidth_schedule]]
client = "a1"
after_segments = 0
slice_kbps = 1000

[[bandwidth_schedule]]
client = "a1"
after_segments = 60
slice_kbps = 3000

[[bandwidth_schedule]]
client = "a1"
after_segments = 120
slice_kbps = 1000

[metrics]
tracked_client = "a1"
avg_window = [1, 200]
"#
        ),
        "table3" => format!("{}{PUSH_COUNT}", head("one lowest-rate client, 100 segments, 2-push")),
        "table3-http1" => {
            format!("{}{}", head("one lowest-rate client, 100 segments, pull only"), PUSH_COUNT.replace("k = 2", "k = 1"))
        }
        "table3-overwrite" => format!(
            "{}{}\n[proxy]\nblanket_rewrite_kbps = 192\nnotices = false\n",
            head("one lowest-rate client, every request rewritten to the second rate, no notice"),
            PUSH_COUNT
        ),
        _ => return None,
    })
}

/// Built-in scenario by name; `None` if no preset has that name.
pub fn preset(name: &str) -> Option<Result<ScenarioConfig>> {
    let src = text(name)?;
    Some(ScenarioConfig::from_toml_str(&src, Path::new(&format!("<preset {name}>"))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::DEFAULT_RATES_KBPS;
    use crate::proxy::Strategy;

    #[test]
    fn every_preset_parses() {
        for name in PRESET_NAMES {
            let cfg = preset(name).unwrap().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(cfg.name, name);
        }
        assert!(preset("nope").is_none());
    }

    #[test]
    fn testbed_constants() {
        for name in ["1-A", "1-B", "1-C", "2-A", "2-B", "table2"] {
            let cfg = preset(name).unwrap().unwrap();
            assert_eq!(cfg.ladder.rates_kbps, DEFAULT_RATES_KBPS.to_vec());
            assert_eq!(cfg.ladder.segment_duration_s, 1.0);
            assert_eq!(cfg.ladder.total_segments, 200);
            assert_eq!(cfg.capacity_kbps, 3000.0);
            assert_eq!(cfg.k, 2);
            assert_eq!(cfg.buffer_max_s, 10.0);
            assert_eq!(cfg.repetitions, 5);
        }
    }

    #[test]
    fn preset_shapes() {
        let b = preset("1-B").unwrap().unwrap();
        assert_eq!(b.clients.len(), 3);
        assert!(b.clients.iter().all(|c| c.join.at_s == Some(0.0)));

        let a = preset("2-A").unwrap().unwrap();
        assert_eq!(a.clients[1].join.after_client.as_deref(), Some("a1"));
        assert_eq!(a.clients[1].join.after_segments, Some(100));

        let t2 = preset("table2").unwrap().unwrap();
        assert_eq!(t2.clients.len(), 1);
        assert_eq!(t2.strategy, Strategy::Reactive);
        let steps: Vec<(u32, f64)> = t2.bandwidth_schedule.iter().map(|s| (s.after_segments, s.slice_kbps)).collect();
        assert_eq!(steps, vec![(0, 1000.0), (60, 3000.0), (120, 1000.0)]);

        assert_eq!(preset("table3-http1").unwrap().unwrap().k, 1);
        assert_eq!(preset("table3-overwrite").unwrap().unwrap().proxy.blanket_rewrite_kbps, Some(192));
    }
}
