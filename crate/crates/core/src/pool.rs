use serde::{Deserialize, Serialize};
use std::fmt;

/// Identity of a spot capacity pool: one instance type in one availability
/// zone. Instances of the same type in the same zone draw from a common
/// resource pool, so this tuple is the granularity at which availability is
/// measured and at which co-interruptions apply.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PoolId {
    pub instance_type: String,
    pub region: String,
    pub zone: String,
}

impl PoolId {
    pub fn new(
        instance_type: impl Into<String>,
        region: impl Into<String>,
        zone: impl Into<String>,
    ) -> Self {
        Self {
            instance_type: instance_type.into(),
            region: region.into(),
            zone: zone.into(),
        }
    }

    /// All three fields must be non-empty; tuple equality defines identity.
    pub fn validate(&self) -> Result<(), String> {
        if self.instance_type.is_empty() || self.region.is_empty() || self.zone.is_empty() {
            return Err(format!(
                "pool id has empty fields: type={:?} region={:?} zone={:?}",
                self.instance_type, self.region, self.zone
            ));
        }
        Ok(())
    }

    /// Filesystem-safe name for per-pool artifacts.
    pub fn slug(&self) -> String {
        let mut s = format!("{}_{}_{}", self.instance_type, self.region, self.zone);
        s = s.replace(['.', '/', ' '], "-");
        s
    }
}

impl fmt::Display for PoolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}/{}", self.instance_type, self.region, self.zone)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_the_full_tuple() {
        let a = PoolId::new("m5.large", "us-east-1", "us-east-1a");
        let b = PoolId::new("m5.large", "us-east-1", "us-east-1a");
        let c = PoolId::new("m5.large", "us-east-1", "us-east-1b");
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn empty_fields_rejected() {
        assert!(PoolId::new("", "us-east-1", "us-east-1a").validate().is_err());
        assert!(PoolId::new("m5.large", "", "a").validate().is_err());
        assert!(PoolId::new("m5.large", "us-east-1", "").validate().is_err());
        assert!(PoolId::new("m5.large", "us-east-1", "us-east-1a")
            .validate()
            .is_ok());
    }

    #[test]
    fn slug_is_filesystem_safe() {
        let p = PoolId::new("m5.large", "us-east-1", "us-east-1a");
        assert_eq!(p.slug(), "m5-large_us-east-1_us-east-1a");
    }
}
