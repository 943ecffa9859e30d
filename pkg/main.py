import os
import sys
import logging

# 添加项目根目录到Python路径
sys.path.insert(0, os.path.dirname(__file__))

# 导入配置管理器
from utils.config import config_manager

# 配置日志
logging.basicConfig(
    level=getattr(logging, config_manager.log_level().upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

from modules.cli.commands import main


if __name__ == "__main__":
    logger.info(f"{config_manager.get('general', 'system_name', '极大值原理数值实验室')} "
                f"v{config_manager.get('general', 'system_version', '1.0.0')}")
    sys.exit(main(sys.argv[1:]))
