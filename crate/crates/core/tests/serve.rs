use futures_util::{SinkExt, StreamExt};
use metrolatch::config::{build_assembly, classic_sync, paper_latch};
use metrolatch::experiments::seeded_start;
use metrolatch::serve::{serve, Action, ClientMessage, CommandMessage, ServerMessage, Session};
use metrolatch::sim::{integrate, EventSchedule};
use tokio_tungstenite::tungstenite::Message;

fn cmd(target: &str, action: Action) -> CommandMessage {
    CommandMessage {
        seq: None,
        target: Some(target.into()),
        action,
    }
}

#[test]
fn scripted_session_matches_batch_replay() {
    let asm = build_assembly(&classic_sync(0.01)).unwrap();
    let init = seeded_start(&asm, 11);
    let mut session = Session::new(asm.clone(), init.clone(), 1e-3, 60.0).unwrap();
    let script: Vec<(usize, CommandMessage)> = vec![
        (90, cmd("a", Action::Hold { duration: Some(0.3) })),
        (200, cmd("b", Action::Impulse { d_theta_dot: 0.4 })),
        (260, cmd("a", Action::Mirror)),
        (300, cmd("b", Action::Delay { fraction: 0.25 })),
        (400, cmd("a", Action::Stop)),
        (470, cmd("a", Action::Start)),
    ];
    let mut frames = Vec::new();
    for n in 0..600 {
        for (at, c) in &script {
            if *at == n {
                let t = session.command(c).unwrap();
                assert!((t - session.time()).abs() < 1e-12);
            }
        }
        frames.push(session.step_frame().unwrap());
    }
    assert_eq!(session.events().len(), script.len());

    let t1 = frames.last().unwrap().t;
    let schedule = EventSchedule::new(session.events().to_vec()).unwrap();
    let batch = integrate(&asm, &init, &schedule, 0.0, t1, 1e-3, 60.0).unwrap();
    assert_eq!(batch.samples.len(), frames.len());
    let mut worst: f64 = 0.0;
    for (f, s) in frames.iter().zip(&batch.samples) {
        assert!((f.t - s.t).abs() < 1e-12);
        for (i, m) in f.metronomes.iter().enumerate() {
            worst = worst.max((m.theta - s.state.theta[i]).abs());
            worst = worst.max((m.tip_xy[0] - s.tips[i][0]).abs());
        }
        worst = worst.max((f.platform_p[0] - s.state.platform_pos[0]).abs());
    }
    assert!(worst <= 1e-9, "max deviation {worst:e}");
}

#[test]
fn zero_speed_repeats_the_last_frame() {
    let asm = build_assembly(&classic_sync(0.01)).unwrap();
    let mut s = Session::new(asm.clone(), seeded_start(&asm, 2), 1e-3, 60.0).unwrap();
    s.tick().unwrap();
    let live = s.tick().unwrap();
    s.command(&CommandMessage {
        seq: None,
        target: None,
        action: Action::SetSpeed { speed: 0.0 },
    })
    .unwrap();
    let a = s.tick().unwrap();
    let b = s.tick().unwrap();
    assert_eq!(a.t, live.t);
    assert_eq!(a, b);
    assert!(s.command(&cmd("a", Action::SetSpeed { speed: -1.0 })).is_err());
}

#[test]
fn bad_commands_leave_the_session_running() {
    let asm = build_assembly(&classic_sync(0.01)).unwrap();
    let mut s = Session::new(asm.clone(), seeded_start(&asm, 3), 1e-3, 60.0).unwrap();
    s.step_frame().unwrap();
    assert!(s.command(&cmd("nobody", Action::Mirror)).is_err());
    assert!(s.command(&cmd("a", Action::Release)).is_err());
    assert!(s.command(&cmd("a", Action::Delay { fraction: 2.0 })).is_err());
    assert!(s.events().is_empty());
    let f = s.step_frame().unwrap();
    assert!(f.t > 0.0);
}

#[test]
fn live_frames_report_lock_and_bit_once_locked() {
    let asm = build_assembly(&classic_sync(0.01)).unwrap();
    let mut s = Session::new(asm.clone(), seeded_start(&asm, 5), 1e-3, 60.0).unwrap();
    let mut last = None;
    for _ in 0..(60 * 90) {
        last = Some(s.step_frame().unwrap());
    }
    let f = last.unwrap();
    let lock = f.lock.expect("lock report after 90 s");
    assert!(lock.locked, "{lock:?}");
    assert!(f.bit.is_some());
}

async fn next_msg<S>(ws: &mut S) -> ServerMessage
where
    S: StreamExt<Item = Result<Message, tokio_tungstenite::tungstenite::Error>> + Unpin,
{
    loop {
        let m = ws.next().await.unwrap().unwrap();
        if let Message::Text(text) = m {
            assert!(text.ends_with('\n'));
            return serde_json::from_str(text.trim_end()).unwrap();
        }
    }
}

async fn next_reply<S>(ws: &mut S) -> ServerMessage
where
    S: StreamExt<Item = Result<Message, tokio_tungstenite::tungstenite::Error>> + Unpin,
{
    loop {
        match next_msg(ws).await {
            ServerMessage::State(_) => continue,
            other => return other,
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn websocket_authority_and_acks() {
    let asm = build_assembly(&paper_latch(0.01)).unwrap();
    let init = seeded_start(&asm, 1);
    let session = Session::new(asm, init, 1e-3, 60.0).unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel();
    tokio::spawn(serve(session, "127.0.0.1:0".parse().unwrap(), Some(tx)));
    let addr = rx.await.unwrap();
    let url = format!("ws://{addr}");

    let (mut a, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
    let ServerMessage::Report {
        client_id: id_a,
        authority,
        ids,
        ..
    } = next_msg(&mut a).await
    else {
        panic!("expected report first");
    };
    assert!(authority);
    assert_eq!(ids, ["red", "green", "blue"]);
    let (mut b, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
    let ServerMessage::Report {
        client_id: id_b,
        authority,
        ..
    } = next_msg(&mut b).await
    else {
        panic!("expected report first");
    };
    assert!(!authority);

    assert!(matches!(next_msg(&mut a).await, ServerMessage::State(_)));

    let send = |c: &ClientMessage| Message::text(serde_json::to_string(c).unwrap() + "\n");
    let hold = ClientMessage::Command(CommandMessage {
        seq: Some(7),
        target: Some("green".into()),
        action: Action::Hold { duration: Some(0.2) },
    });

    // Viewer commands are refused.
    b.send(send(&hold)).await.unwrap();
    let r = next_reply(&mut b).await;
    assert!(matches!(r, ServerMessage::Error { seq: Some(7), .. }), "{r:?}");

    // Malformed input is refused and the connection stays usable.
    a.send(Message::text("{\"type\":\"command\",\"action\":\"warp\"}\n"))
        .await
        .unwrap();
    assert!(matches!(next_reply(&mut a).await, ServerMessage::Error { .. }));

    a.send(send(&hold)).await.unwrap();
    match next_reply(&mut a).await {
        ServerMessage::Ack { seq, applied_at } => {
            assert_eq!(seq, Some(7));
            assert!(applied_at >= 0.0);
        }
        other => panic!("expected ack, got {other:?}"),
    }

    a.send(send(&ClientMessage::Transfer { to: id_b })).await.unwrap();
    assert!(matches!(next_reply(&mut a).await, ServerMessage::Ack { .. }));
    a.send(send(&hold)).await.unwrap();
    assert!(matches!(next_reply(&mut a).await, ServerMessage::Error { .. }));
    let impulse = ClientMessage::Command(CommandMessage {
        seq: Some(8),
        target: Some("red".into()),
        action: Action::Impulse { d_theta_dot: 0.1 },
    });
    b.send(send(&impulse)).await.unwrap();
    assert!(matches!(
        next_reply(&mut b).await,
        ServerMessage::Ack { seq: Some(8), .. }
    ));
    assert_ne!(id_a, id_b);
}

#[test]
fn grab_and_release_flips_the_live_bit() {
    let asm = build_assembly(&paper_latch(0.01)).unwrap();
    let mut s = Session::new(asm.clone(), seeded_start(&asm, 10), 1e-3, 60.0).unwrap();
    let run_to = |s: &mut Session, t: f64| {
        let mut last = None;
        while s.time() < t {
            last = Some(s.step_frame().unwrap());
        }
        last.unwrap()
    };
    run_to(&mut s, 45.0);
    let blue = &asm.metronomes()[2];
    let kick = blue.limit_cycle_amplitude() * std::f64::consts::TAU * blue.frequency(asm.gravity());
    s.command(&cmd("blue", Action::Release)).unwrap();
    s.command(&cmd("blue", Action::Start)).unwrap();
    s.command(&cmd("blue", Action::Impulse { d_theta_dot: kick })).unwrap();
    let before = run_to(&mut s, 110.0).bit.expect("latched before the flip");
    s.command(&cmd("green", Action::Hold { duration: None })).unwrap();
    run_to(&mut s, 110.5);
    s.command(&cmd("green", Action::Release)).unwrap();
    let f = run_to(&mut s, 170.0);
    let after = f
        .bit
        .unwrap_or_else(|| panic!("not latched after the flip: {:?}", f.lock));
    assert_ne!(before.value, after.value, "{before:?} -> {after:?}");
}
