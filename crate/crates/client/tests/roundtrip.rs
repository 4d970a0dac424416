#[path = "../../server/tests/common/mod.rs"]
mod common;

use std::sync::Arc;

use fefet_client::{Client, ClientError};
use fefet_core::interface::*;

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn client_round_trips_every_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (fno, iv) = tokio::task::spawn_blocking({
        let p = dir.path().to_path_buf();
        move || common::toy_checkpoints(&p)
    })
    .await
    .unwrap();
    let state = Arc::new(ServiceState::load(&fno, &iv).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(fefet_server::serve(listener, fefet_server::router(state.clone(), None), async {
        let _ = rx.await;
    }));

    let c = Client::new(&url);
    assert_eq!(c.health().await.unwrap().status, "ok");
    assert_eq!(c.meta().await.unwrap(), state.meta());

    let req = PredictRequest {
        t_hzo_nm: 7.0,
        temp_k: 350.0,
        tau_s: 1e3,
        include_maps: false,
    };
    let remote = c.predict(&req).await.unwrap();
    let local = state.predict(&req).unwrap();
    assert_eq!(remote.vth_v, local.vth_v);
    assert_eq!(remote.id_log10, local.id_log10);

    let r = c
        .retention(&RetentionRequest {
            t_hzo_nm: 7.0,
            temp_k: 350.0,
            tau_grid: vec![1.0, 100.0],
        })
        .await
        .unwrap();
    assert_eq!(r.dvth_v, state.predictor.retention(7.0, 350.0, &[1.0, 100.0]).unwrap());

    let bad = PredictRequest { tau_s: -1.0, ..req };
    match c.predict(&bad).await {
        Err(ClientError::Api { status: 400, kind, .. }) => assert_eq!(kind, "bad_request"),
        other => panic!("{other:?}"),
    }

    tx.send(()).unwrap();
    server.await.unwrap().unwrap();
    assert!(matches!(c.health().await, Err(ClientError::Http(_))));
}
