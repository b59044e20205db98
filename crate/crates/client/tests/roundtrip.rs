use std::time::Duration;

use rewardtree_client::Client;
use rewardtree_core::api::{CreateRun, PairResponse, RunState};
use rewardtree_core::model::RunConfig;
use rewardtree_service::{serve, AppState};

fn start_service() -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            serve(listener, AppState::new(None)).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

#[test]
fn client_drives_a_run_to_completion() {
    let client = Client::new(&start_service()).unwrap();
    let req = CreateRun {
        config: RunConfig {
            n_max: 20,
            f_l: 10,
            k_max: 8,
            n_post_fix: Some(4),
            seed: 9,
            ..RunConfig::default()
        },
        ..CreateRun::default()
    };
    let run = client.create_run(&req).unwrap();
    assert_eq!(client.runs().unwrap().len(), 1);

    let poll = Duration::from_millis(5);
    let first = match client.wait_pair(&run.id, poll, 2000).unwrap() {
        PairResponse::Pair(p) => p,
        other => panic!("{other:?}"),
    };
    // A refresh re-serves the same pending pair.
    match client.pair(&run.id).unwrap() {
        PairResponse::Pair(p) => assert_eq!(p.nonce, first.nonce),
        other => panic!("{other:?}"),
    }
    let accepted = client.label(&run.id, &first.nonce, 0.7).unwrap();
    assert_eq!((accepted.k, accepted.stored_y), (1, 0.7));
    let err = client.label(&run.id, &first.nonce, 0.7).unwrap_err();
    assert_eq!(err.status(), Some(409));

    while let PairResponse::Pair(p) = client.wait_pair(&run.id, poll, 2000).unwrap() {
        client.label(&run.id, &p.nonce, 0.2).unwrap();
    }
    let done = client.run(&run.id).unwrap();
    assert_eq!(done.state, RunState::Completed);
    assert_eq!(done.labels_spent, 8);
    let tree = client.tree(&run.id, None).unwrap();
    assert_eq!(tree.version, done.tree_version);
    assert_eq!(client.timeline(&run.id).unwrap().batches.len(), 2);
    assert_eq!(client.traces(&run.id).unwrap().len(), 24);
    assert!(client.rectangles(&run.id, "x", "y").is_ok());
    assert!(client.report(&run.id, 0).is_ok());
    assert_eq!(client.tree(&run.id, Some(500)).unwrap_err().status(), Some(404));
    assert_eq!(client.run("missing").unwrap_err().status(), Some(404));
}
