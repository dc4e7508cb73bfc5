use std::io::Cursor;

use wip_core::course::{CourseSpec, PilotProfile};
use wip_core::mapping::{MappingConfig, MappingMode};
use wip_core::model::RobotParams;
use wip_core::record::{first_divergence, replay, run_scripted, RunRecord};
use wip_core::synthesis::GainSet;
use wip_core::world::{ConfigChange, RunSetup, SimConfig, World};
use wip_teleop::runlog::{read_log, verdict_line, write_log, LogError};

fn setup(course: CourseSpec) -> RunSetup {
    let params = RobotParams::default();
    RunSetup {
        gains: GainSet::synthesized(&params).unwrap(),
        params,
        mapping: MappingConfig::default(),
        course,
        sim: SimConfig::default(),
    }
}

fn short_run() -> RunRecord {
    let s = setup(CourseSpec::three_cone());
    let pilot = PilotProfile::step(&s.mapping);
    run_scripted(&s, &pilot, Some(3500)).unwrap()
}

fn to_text(r: &RunRecord) -> String {
    String::from_utf8(write_log(Vec::new(), r).unwrap()).unwrap()
}

#[test]
fn log_roundtrip_is_lossless() {
    let r = short_run();
    let text = to_text(&r);
    assert!(text.starts_with("wiprun 1\nsetup {"));
    let back = read_log(Cursor::new(text.as_bytes())).unwrap();
    assert_eq!(back, r);
    assert_eq!(first_divergence(&back.frames, &r.frames), None);
}

#[test]
fn frame_lines_have_documented_width() {
    let text = to_text(&short_run());
    for line in text.lines().filter(|l| l.starts_with("frame ")) {
        assert_eq!(line.split(' ').count(), 33);
    }
}

#[test]
fn truncated_log_names_last_frame() {
    let text = to_text(&short_run());
    let cut = text.len() / 2;
    let err = read_log(Cursor::new(&text.as_bytes()[..cut])).unwrap_err();
    let LogError::Truncated { last_frame: Some(last), .. } = err else { panic!("{err:?}") };
    let whole_lines = &text[..text[..cut].rfind('\n').unwrap() + 1];
    let complete = whole_lines.lines().filter(|l| l.starts_with("frame ")).count() as u64;
    assert_eq!(last, complete);
    assert!(err.to_string().contains(&format!("tick {last}")));

    let without_footer: String = text.lines().filter(|l| !l.starts_with("end ")).map(|l| format!("{l}\n")).collect();
    match read_log(Cursor::new(without_footer.as_bytes())) {
        Err(LogError::Truncated { last_frame: Some(3500), .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn version_mismatch_is_reported() {
    let text = to_text(&short_run()).replacen("wiprun 1", "wiprun 7", 1);
    let err = read_log(Cursor::new(text.as_bytes())).unwrap_err();
    assert!(matches!(err, LogError::Version { ref found } if found == "7"));
    assert!(read_log(Cursor::new(b"hello\n".as_slice())).is_err());
}

#[test]
fn corrupt_field_reports_line() {
    let text = to_text(&short_run());
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[10] = lines[10].replacen(' ', " x", 2);
    let err = read_log(Cursor::new(lines.join("\n").as_bytes())).unwrap_err();
    assert!(matches!(err, LogError::Parse { line: 11, .. }), "{err:?}");
}

#[test]
fn config_and_lost_events_survive_the_file() {
    let s = setup(CourseSpec::three_cone());
    let mut world = World::new(s.clone()).unwrap();
    let mut rec = RunRecord::new(s.clone());
    let mut seq = 0;
    for i in 0..4000u64 {
        if i % 16 == 0 && i < 2500 {
            seq += 1;
            world.offer_input(wip_core::mapping::PilotInput::new(0.02, 0.05, world.time(), seq)).unwrap();
        }
        if i == 1200 {
            let m = MappingConfig::default().with_mode(MappingMode::Acceleration);
            world.queue_config(ConfigChange { mapping: Some(m), gains: None }).unwrap();
        }
        if i == 2600 {
            world.notify_input_lost();
        }
        rec.push(&world.tick().unwrap());
    }
    rec.metrics = rec.compute_metrics();
    assert!(rec.metrics.gains_changed);
    let back = read_log(Cursor::new(to_text(&rec).as_bytes())).unwrap();
    assert_eq!(back.config_events, rec.config_events);
    assert_eq!(back.lost_events, vec![2600]);
    let again = replay(&back).unwrap();
    assert_eq!(first_divergence(&again.frames, &rec.frames), None);
    assert_eq!(verdict_line(&again.metrics), verdict_line(&rec.metrics));
}
