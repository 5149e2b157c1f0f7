#[path = "common/wire.rs"]
mod wire;

#[test]
fn handshake_and_in_order() {
    wire::handshake_and_in_order().unwrap();
}

#[test]
fn out_of_order_ids() {
    wire::out_of_order_ids().unwrap();
}

#[test]
fn per_item_errors() {
    wire::per_item_errors().unwrap();
}

#[test]
fn malformed_payloads() {
    wire::malformed_payloads().unwrap();
}

#[test]
fn crash_mid_batch() {
    wire::crash_mid_batch().unwrap();
}

#[test]
fn response_timeout() {
    wire::timeout().unwrap();
}

#[test]
fn bad_handshake() {
    wire::bad_handshake().unwrap();
}

#[test]
fn missing_program() {
    wire::missing_program().unwrap();
}

#[test]
fn objective_mismatch() {
    wire::objective_mismatch().unwrap();
}

#[test]
fn request_fixtures() {
    wire::request_fixtures().unwrap();
}

#[test]
fn response_fixtures() {
    wire::response_fixtures().unwrap();
}
