//! Optional event trace, `time,event,node,msg_uid,detail`.

use crate::NodeId;

#[derive(Debug)]
pub struct Trace {
    out: csv::Writer<Vec<u8>>,
}

impl Default for Trace {
    fn default() -> Self {
        Self::new()
    }
}

impl Trace {
    pub fn new() -> Self {
        let mut out = csv::Writer::from_writer(Vec::new());
        out.write_record(["time", "event", "node", "msg_uid", "detail"]).expect("in-memory csv");
        Self { out }
    }

    pub fn event(&mut self, time: f64, event: &str, node: NodeId, uid: u64, detail: &str) {
        self.out
            .write_record([&format!("{time:.1}"), event, &node.0.to_string(), &uid.to_string(), detail])
            .expect("in-memory csv");
    }

    pub fn into_csv(self) -> String {
        String::from_utf8(self.out.into_inner().expect("in-memory csv")).expect("utf-8 trace")
    }
}
